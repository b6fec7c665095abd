use super::gradcheck::{grad_check, grad_check_many};
use super::*;
use crate::ssm::ScanMode;

fn wave(shape: impl Into<Vec<usize>>, phase: f64) -> Tensor {
    Tensor::from_fn(shape, |i| (i as f64 * 0.731 + phase).sin())
}

#[test]
fn matmul_matches_loops() {
    let a = wave([4, 5], 0.1);
    let b = wave([5, 3], 0.7);
    let t = Tape::new();
    let y = t.constant(a.clone()).matmul(t.constant(b.clone())).unwrap();
    let y = y.value();
    for i in 0..4 {
        for j in 0..3 {
            let r: f64 = (0..5).map(|k| a.at(&[i, k]) * b.at(&[k, j])).sum();
            assert!((y.at(&[i, j]) - r).abs() < 1e-14);
        }
    }
}

#[test]
fn matmul_gradients() {
    let errs = grad_check_many(
        |v| v[0].matmul(v[1])?.square()?.sum(),
        &[wave([4, 5], 0.1), wave([5, 3], 0.7)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

#[test]
fn batched_and_shared_matmul_gradients() {
    let errs = grad_check_many(
        |v| v[0].matmul(v[1])?.square()?.sum(),
        &[wave([2, 3, 4], 0.2), wave([2, 4, 2], 0.5)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
    let errs = grad_check_many(
        |v| v[0].matmul(v[1])?.square()?.sum(),
        &[wave([3, 4], 0.2), wave([2, 4, 2], 0.5)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

#[test]
fn matmul_shape_mismatch() {
    let t = Tape::new();
    let r = t.constant(Tensor::zeros([2, 3])).matmul(t.constant(Tensor::zeros([4, 2])));
    assert!(matches!(r, Err(Error::Dimension { .. })));
}

#[test]
fn pointwise_values() {
    let t = Tape::new();
    let z = t.constant(Tensor::scalar(0.0));
    assert_eq!(z.softplus().unwrap().value().item().unwrap(), 2f64.ln());
    assert_eq!(z.silu().unwrap().value().item().unwrap(), 0.0);
    assert_eq!(z.sigmoid().unwrap().value().item().unwrap(), 0.5);
    assert_eq!(z.exp().unwrap().value().item().unwrap(), 1.0);
    let big = t.constant(Tensor::scalar(800.0));
    assert_eq!(big.softplus().unwrap().value().item().unwrap(), 800.0);
    let small = t.constant(Tensor::scalar(-800.0));
    assert_eq!(small.sigmoid().unwrap().value().item().unwrap(), 0.0);
}

#[test]
fn pointwise_gradients() {
    let x = wave([3, 4], 0.3).reshape([12]).unwrap();
    for kind in [Unary::Exp, Unary::Sigmoid, Unary::Silu, Unary::Softplus, Unary::Square, Unary::Neg, Unary::Scale(-2.5)] {
        let e = grad_check(|v| v.unary(kind)?.square()?.sum(), &x, 1e-6).unwrap();
        assert!(e < 1e-6, "{}: {e}", kind.name());
    }
    // relu away from its kink
    let shifted = Tensor::from_fn([12], |i| if i % 2 == 0 { 0.5 + i as f64 } else { -0.5 - i as f64 });
    let e = grad_check(|v| v.relu()?.square()?.sum(), &shifted, 1e-6).unwrap();
    assert!(e < 1e-6);
}

#[test]
fn broadcasting_binary_gradients() {
    let errs = grad_check_many(
        |v| v[0].mul(v[1])?.add(v[2])?.sub(v[1])?.square()?.mean(),
        &[wave([2, 3, 4], 0.0), wave([4], 1.0), Tensor::scalar(0.3)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

#[test]
fn incompatible_broadcast() {
    let t = Tape::new();
    let r = t.constant(Tensor::zeros([2, 3])).add(t.constant(Tensor::zeros([2])));
    assert!(matches!(r, Err(Error::Dimension { .. })));
}

#[test]
fn layer_norm_constant_row_is_zero() {
    let t = Tape::new();
    let x = t.constant(Tensor::full([2, 5], 3.25));
    let y = x
        .layer_norm(t.constant(Tensor::full([5], 1.0)), t.constant(Tensor::zeros([5])), 1e-5)
        .unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_two_values() {
    let t = Tape::new();
    let x = t.constant(Tensor::new([1, 2], vec![1.0, 3.0]).unwrap());
    let y = x
        .layer_norm(t.constant(Tensor::full([2], 1.0)), t.constant(Tensor::zeros([2])), 1e-12)
        .unwrap();
    let y = y.value();
    assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_moments_and_gradients() {
    let x = Tensor::from_fn([8, 16], |i| (i as f64 * 1.37).sin() * 30.0 + (i / 16) as f64);
    let t = Tape::new();
    let y = t
        .constant(x.clone())
        .layer_norm(t.constant(Tensor::full([16], 1.0)), t.constant(Tensor::zeros([16])), 1e-5)
        .unwrap();
    let y = y.value();
    for row in y.data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
    let errs = grad_check_many(
        |v| v[0].layer_norm(v[1], v[2], 1e-5)?.mul(v[3])?.sum(),
        &[x, wave([16], 0.4), wave([16], 0.9), wave([8, 16], 2.0)],
        1e-6,
    )
    .unwrap();
    assert!(errs[..3].iter().all(|&e| e < 1e-5), "{errs:?}");
}

#[test]
fn concat_and_slice_round_trip() {
    let t = Tape::new();
    let widths = [24, 24, 24, 16, 80];
    let parts: Vec<Var<'_>> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| t.constant(wave([2, 3, w], i as f64)))
        .collect();
    let z = concat_last(&parts).unwrap();
    assert_eq!(z.shape(), vec![2, 3, 168]);
    let mut start = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        let back = z.slice_last(start, w).unwrap();
        assert!(back.value().bitwise_eq(&p.value()));
        start += w;
    }
    assert!(z.slice_last(160, 9).is_err());
}

#[test]
fn concat_slice_gradients() {
    let errs = grad_check_many(
        |v| {
            let z = concat_last(&[v[0], v[1]])?;
            z.slice_last(1, 4)?.square()?.sum()
        },
        &[wave([3, 2], 0.0), wave([3, 5], 1.0)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

#[test]
fn embedding_lookup_rows_and_errors() {
    let t = Tape::new();
    let table = t.constant(Tensor::arange([5, 2]));
    let y = embedding_lookup(table, &[4, 0, 4], &[3]).unwrap();
    assert_eq!(y.value().data(), &[8.0, 9.0, 0.0, 1.0, 8.0, 9.0]);
    assert!(matches!(
        embedding_lookup(table, &[5], &[1]),
        Err(Error::Index { index: 5, len: 5 })
    ));
}

#[test]
fn embedding_lookup_scatters_repeated_rows() {
    let tape = Tape::new();
    let table = tape.param(Tensor::zeros([3, 2]));
    let y = embedding_lookup(table, &[1, 1, 2], &[3]).unwrap();
    let g = tape.backward(y.sum().unwrap()).unwrap();
    assert_eq!(g.get(table).unwrap(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
}

#[test]
fn dropout_rate_and_determinism() {
    let m = DropoutMask::sample(1_000_000, 0.1, 7, 3, 11).unwrap();
    let dropped = m.scale.iter().filter(|&&s| s == 0.0).count() as f64 / 1e6;
    assert!((dropped - 0.1).abs() < 0.003, "{dropped}");
    let again = DropoutMask::sample(1000, 0.1, 7, 3, 11).unwrap();
    assert_eq!(&again.scale[..], &m.scale[..1000]);
    let other_step = DropoutMask::sample(1000, 0.1, 7, 3, 27).unwrap();
    assert_ne!(other_step.scale, again.scale);
    assert!(DropoutMask::sample(4, 1.0, 0, 0, 0).is_err());
}

#[test]
fn dropout_scales_kept_values() {
    let t = Tape::new();
    let m = DropoutMask::sample(100, 0.5, 1, 0, 0).unwrap();
    let y = t.constant(Tensor::full([100], 1.0)).dropout(Some(&m)).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0 || v == 2.0));
    let id = t.constant(Tensor::full([3], 1.0)).dropout(None).unwrap();
    assert_eq!(id.value().data(), &[1.0; 3]);
}

#[test]
fn backward_of_product() {
    let t = Tape::new();
    let x = t.param(Tensor::new([2], vec![2.0, -3.0]).unwrap());
    let y = t.param(Tensor::new([2], vec![5.0, 0.5]).unwrap());
    let loss = x.mul(y).unwrap().sum().unwrap();
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap(), &[5.0, 0.5]);
    assert_eq!(g.get(y).unwrap(), &[2.0, -3.0]);
}

#[test]
fn shared_subexpression_accumulates() {
    let t = Tape::new();
    let x = t.param(Tensor::scalar(3.0));
    let loss = x.mul(x).unwrap().add(x).unwrap();
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap(), &[7.0]);
}

#[test]
fn backward_contract_errors() {
    let t = Tape::new();
    let x = t.param(Tensor::zeros([3]));
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    let c = t.constant(Tensor::scalar(1.0));
    assert!(matches!(t.backward(c.exp().unwrap()), Err(Error::Contract(_))));
}

#[test]
fn non_finite_results_are_reported() {
    let t = Tape::new();
    let x = t.constant(Tensor::scalar(1000.0));
    assert!(matches!(x.exp(), Err(Error::NonFinite { .. })));
}

#[test]
fn reshape_permute_gradients() {
    let errs = grad_check_many(
        |v| {
            let p = v[0].permute(&[2, 0, 1])?.reshape([4, 6])?;
            p.mul(v[1])?.sum()
        },
        &[wave([2, 3, 4], 0.0), wave([4, 6], 0.5)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

#[test]
fn causal_conv_is_causal() {
    let x = wave([2, 6, 3], 0.0);
    let w = wave([3, 4], 1.0);
    let b = wave([3], 2.0);
    let t = Tape::new();
    let y0 = t
        .constant(x.clone())
        .causal_conv1d(t.constant(w.clone()), t.constant(b.clone()))
        .unwrap()
        .value();
    let mut x2 = x.clone();
    // perturb step 4 of sample 0
    for ch in 0..3 {
        x2.data_mut()[4 * 3 + ch] += 1.0;
    }
    let y1 = t
        .constant(x2)
        .causal_conv1d(t.constant(w.clone()), t.constant(b.clone()))
        .unwrap()
        .value();
    for k in 0..4 {
        for ch in 0..3 {
            assert_eq!(y0.at(&[0, k, ch]).to_bits(), y1.at(&[0, k, ch]).to_bits());
        }
    }
    assert_ne!(y0.at(&[0, 4, 0]), y1.at(&[0, 4, 0]));
    // step 0 sees only the last tap
    let expect = x.at(&[1, 0, 2]) * w.at(&[2, 3]) + b.at(&[2]);
    assert!((y0.at(&[1, 0, 2]) - expect).abs() < 1e-15);
}

#[test]
fn causal_conv_gradients() {
    let errs = grad_check_many(
        |v| v[0].causal_conv1d(v[1], v[2])?.square()?.sum(),
        &[wave([2, 6, 3], 0.0), wave([3, 4], 1.0), wave([3], 2.0)],
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
}

fn scan_inputs(s: usize, l: usize, d: usize, n: usize) -> Vec<Tensor> {
    vec![
        wave([s, l, d], 0.0),
        Tensor::from_fn([s, l, d], |i| 0.05 + 0.3 * ((i as f64 * 0.37).sin() + 1.0)),
        Tensor::from_fn([d, n], |i| -(0.5 + (i % n) as f64 * 0.7)),
        wave([s, l, n], 1.3),
        wave([s, l, n], 2.1),
        wave([d], 0.8),
    ]
}

#[test]
fn scan_gradients_all_inputs() {
    for mode in [ScanMode::Sequential, ScanMode::Parallel { chunk: 2 }] {
        let weights = wave([2, 5, 3], 3.3);
        let errs = grad_check_many(
            |v| {
                let y = selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], mode)?;
                y.mul(v[0].tape().constant(weights.clone()))?.sum()
            },
            &scan_inputs(2, 5, 3, 4),
            1e-6,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-6), "{mode:?}: {errs:?}");
    }
}

#[test]
fn scan_modes_agree() {
    let x = scan_inputs(3, 17, 4, 3);
    let t = Tape::new();
    let v: Vec<Var<'_>> = x.iter().map(|x| t.constant(x.clone())).collect();
    let seq = selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], ScanMode::Sequential).unwrap();
    for chunk in [1, 4, 17] {
        let par = selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], ScanMode::Parallel { chunk }).unwrap();
        assert!(seq.value().max_abs_diff(&par.value()) < 1e-12);
    }
}

#[test]
fn corrupted_rule_is_detected() {
    let x = wave([6], 0.2);
    let clean = grad_check(|v| v.silu()?.sum(), &x, 1e-6).unwrap();
    assert!(clean < 1e-6);
    let bad = fault::with_corrupted_backward("silu", || grad_check(|v| v.silu()?.sum(), &x, 1e-6).unwrap());
    assert!(bad > 1e-2, "{bad}");
}
