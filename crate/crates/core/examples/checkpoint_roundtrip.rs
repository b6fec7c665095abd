//! Saves a model's parameters, reloads them into a fresh model and checks
//! that the forecast is bit-for-bit unchanged.

use mcst::checkpoint;
use mcst::model::{MCSTModel, ModelConfig};
use mcst::Tensor;

fn main() -> mcst::Result<()> {
    let model = MCSTModel::new(ModelConfig::new(3), 42)?;
    let bytes = checkpoint::encode(&model.params)?;
    println!("{} parameters, {} tensors, {} bytes", model.params.numel(), model.params.len(), bytes.len());

    let restored = MCSTModel::from_params(&checkpoint::decode(&bytes)?)?;
    let x = Tensor::from_fn([2, 12, 3, 3], |i| (i as f64 * 0.21).sin());
    let tod: Vec<usize> = (0..24).map(|k| (200 + k) % 288).collect();
    let dow = vec![5; 24];
    let a = model.predict(&x, &tod, &dow)?;
    let b = restored.predict(&x, &tod, &dow)?;
    println!("forecast {:?}, bitwise equal after reload: {}", a.shape(), a.bitwise_eq(&b));
    Ok(())
}
