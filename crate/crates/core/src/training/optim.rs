use std::f64::consts::PI;

use serde::Serialize;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Mean of squared differences over every element.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(
            "mse_loss",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    pred.sub(target)?.square()?.mean()
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Completed optimizer steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter from its `grad`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} parameters, store holds {}",
            state.m.len(),
            store.len()
        )));
    }
    if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
        return Err(Error::Contract(format!("no gradient for parameter {}", p.name)));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.as_ref().expect("checked above");
        let theta = p.value.data_mut();
        for (((th, &gi), mi), vi) in theta.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *th -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let sq: f64 = store
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

/// Cosine annealing from `lr_init` at epoch 0 to `lr_min` at `max_epochs`.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr_init: f64, lr_min: f64) -> f64 {
    if max_epochs == 0 || epoch >= max_epochs {
        return lr_min;
    }
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (PI * epoch as f64 / max_epochs as f64).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EarlyStopping {
    pub best: f64,
    pub best_epoch: Option<usize>,
    /// Consecutive epochs without improvement.
    pub counter: usize,
    pub patience: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            best: f64::INFINITY,
            best_epoch: None,
            counter: 0,
            patience,
        }
    }

    /// Records the validation score of `epoch`; lower is better.
    pub fn update(&mut self, epoch: usize, current: f64) -> StopDecision {
        let (stop, improved, counter) = early_stop_update(self.best, current, self.counter, self.patience);
        self.counter = counter;
        if improved {
            self.best = current;
            self.best_epoch = Some(epoch);
        }
        StopDecision { improved, stop }
    }
}

/// `(stop, improved, new_counter)` after observing `current`.
pub fn early_stop_update(best: f64, current: f64, counter: usize, patience: usize) -> (bool, bool, usize) {
    if current < best {
        (false, true, 0)
    } else {
        let c = counter + 1;
        (c >= patience, false, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::grad_check_many;
    use crate::autodiff::Tape;

    #[test]
    fn mse_values() {
        let t = Tape::new();
        let y = t.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
        assert_eq!(mse_loss(y, y).unwrap().value().item().unwrap(), 0.0);
        let p = t.constant(Tensor::new([2], vec![4.0, 3.0]).unwrap());
        assert_eq!(mse_loss(p, y).unwrap().value().item().unwrap(), 1.0);
        let bad = t.constant(Tensor::zeros([3]));
        assert!(mse_loss(bad, y).is_err());
    }

    #[test]
    fn mse_gradient() {
        let p = Tensor::from_fn([3, 4], |i| (i as f64).sin());
        let y = Tensor::from_fn([3, 4], |i| (i as f64).cos());
        let errs = grad_check_many(|v| mse_loss(v[0], v[1]), &[p.clone(), y.clone()], 1e-6).unwrap();
        assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
        // closed form 2(p - y)/N
        let tape = Tape::new();
        let pv = tape.param(p.clone());
        let g = tape.backward(mse_loss(pv, tape.constant(y.clone())).unwrap()).unwrap();
        for ((gi, a), b) in g.get(pv).unwrap().iter().zip(p.data()).zip(y.data()) {
            assert!((gi - 2.0 * (a - b) / 12.0).abs() < 1e-15);
        }
    }

    fn one_param(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full([3], value)).unwrap();
        s.get_mut(id).grad = Some(Tensor::full([3], grad));
        s
    }

    #[test]
    fn first_adam_step() {
        let mut s = one_param(0.0, 1.0);
        let mut st = AdamState::new(&s, 0.9, 0.999, 1e-8);
        adam_step(&mut s, &mut st, 0.001).unwrap();
        for &v in s.iter().next().unwrap().value.data() {
            assert!((v + 0.001).abs() < 1e-6 * 0.001, "{v}");
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_bitwise() {
        let mut s = one_param(0.37, 0.0);
        let before = s.snapshot();
        let mut st = AdamState::new(&s, 0.9, 0.999, 1e-8);
        adam_step(&mut s, &mut st, 0.001).unwrap();
        assert!(s.snapshot()[0].bitwise_eq(&before[0]));
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut s = one_param(0.0, 1.0);
        s.zero_grads();
        let mut st = AdamState::new(&s, 0.9, 0.999, 1e-8);
        assert!(matches!(adam_step(&mut s, &mut st, 0.001), Err(Error::Contract(_))));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut s = one_param(0.0, 4.0);
        let norm = clip_grad_norm(&mut s, 5.0);
        assert!((norm - 48f64.sqrt()).abs() < 1e-12);
        let g = s.iter().next().unwrap().grad.clone().unwrap();
        let after: f64 = g.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
        assert_eq!(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5);
        assert_eq!(cosine_lr(250, 100, 1e-3, 1e-5), 1e-5);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn early_stopping_patience() {
        let mut es = EarlyStopping::new(15);
        for e in 0..50 {
            assert!(!es.update(e, 100.0 - e as f64).stop);
        }
        let mut es = EarlyStopping::new(15);
        es.update(0, 1.0);
        for e in 1..15 {
            assert!(!es.update(e, 1.0).stop, "epoch {e}");
        }
        assert!(es.update(15, 1.0).stop);
    }

    #[test]
    fn late_improvement_resets_counter() {
        let mut es = EarlyStopping::new(15);
        es.update(0, 1.0);
        for e in 1..14 {
            es.update(e, 2.0);
        }
        let d = es.update(14, 0.5);
        assert!(d.improved && !d.stop);
        assert_eq!(es.counter, 0);
        assert_eq!(es.best_epoch, Some(14));
    }
}
