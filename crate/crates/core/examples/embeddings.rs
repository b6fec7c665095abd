//! Builds the input embedding at full width, shows the concatenated and
//! projected shapes, and prints the parameter breakdown for 307 sensors.

use mcst::autodiff::Tape;
use mcst::embeddings::time_indices;
use mcst::model::{MCSTModel, ModelConfig};
use mcst::Tensor;

fn main() -> mcst::Result<()> {
    let model = MCSTModel::new(ModelConfig::new(5), 0)?;
    let cfg = &model.tables.cfg;
    println!(
        "feature {} + tod {} + dow {} + spatial {} + adaptive {} = {}",
        cfg.d_feat,
        cfg.d_tod,
        cfg.d_dow,
        cfg.d_spatial,
        cfg.d_adaptive,
        cfg.d_concat()
    );

    // one window starting Friday 07:55
    let (tod, dow) = time_indices(95, 4, 12, 1)?;
    println!("time-of-day slots {tod:?}");
    println!("day-of-week       {dow:?}");

    let tape = Tape::new();
    let p = model.params.bind(&tape, false);
    let x = tape.constant(Tensor::from_fn([1, 12, 5, 3], |i| (i as f64 * 0.1).sin()));
    let z = model.tables.assemble(&p, x, &tod, &dow)?;
    let e = model.tables.project(&p, z)?;
    println!("assembled {:?} -> projected {:?}", z.shape(), e.shape());

    let count = MCSTModel::new(ModelConfig::new(307), 0)?.parameter_count();
    for (group, n) in &count.breakdown {
        println!("{group:<22} {n:>8}");
    }
    println!("{:<22} {:>8}", "total", count.total);
    Ok(())
}
