//! Records a small computation on a tape, pulls gradients back, and checks
//! them against central differences.

use mcst::autodiff::gradcheck::grad_check;
use mcst::autodiff::Tape;
use mcst::Tensor;

fn main() -> mcst::Result<()> {
    let tape = Tape::new();
    let x = tape.param(Tensor::from_fn([2, 3], |i| i as f64 * 0.5 - 1.0));
    let w = tape.param(Tensor::from_fn([3, 2], |i| (i as f64).cos()));
    let y = x.matmul(w)?.silu()?.sum()?;
    println!("loss = {:.6}", y.value().item()?);

    let grads = tape.backward(y)?;
    println!("dL/dx = {:?}", grads.get(x).unwrap());
    println!("dL/dw = {:?}", grads.get(w).unwrap());

    let w0 = Tensor::from_fn([3, 2], |i| (i as f64).cos());
    let err = grad_check(
        |xv| {
            let t = xv.tape();
            xv.matmul(t.constant(w0.clone()))?.silu()?.sum()
        },
        &Tensor::from_fn([2, 3], |i| i as f64 * 0.5 - 1.0),
        1e-6,
    )?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
