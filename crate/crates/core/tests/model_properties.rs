use mcst::autodiff::{concat_last, Tape};
use mcst::checkpoint;
use mcst::model::{combine_pathways, reshape_spatial, reshape_temporal, unreshape_spatial, unreshape_temporal, MCSTModel, ModelConfig};
use mcst::Tensor;

fn small(n: usize) -> MCSTModel {
    MCSTModel::new(ModelConfig::with_dims(n, 12, 12, 16, 4), 21).unwrap()
}

fn inputs(m: usize, n: usize) -> (Tensor, Vec<usize>, Vec<usize>) {
    let x = Tensor::from_fn([m, 12, n, 3], |i| ((i * 2654435761) % 1000) as f64 / 250.0 - 2.0);
    let tod = (0..m * 12).map(|k| (37 * k + 5) % 288).collect();
    let dow = (0..m * 12).map(|k| (k / 12 + 3) % 7).collect();
    (x, tod, dow)
}

#[test]
fn forecast_shape() {
    let model = small(4);
    let (x, tod, dow) = inputs(2, 4);
    assert_eq!(model.predict(&x, &tod, &dow).unwrap().shape(), &[2, 12, 4, 3]);
}

#[test]
fn permuting_samples_permutes_outputs() {
    let (m, n) = (4, 3);
    let model = small(n);
    let (x, tod, dow) = inputs(m, n);
    let order = [2, 0, 3, 1];
    let per_x = 12 * n * 3;
    let mut xp = Vec::new();
    let (mut tp, mut dp) = (Vec::new(), Vec::new());
    for &s in &order {
        xp.extend_from_slice(&x.data()[s * per_x..(s + 1) * per_x]);
        tp.extend_from_slice(&tod[s * 12..(s + 1) * 12]);
        dp.extend_from_slice(&dow[s * 12..(s + 1) * 12]);
    }
    let y = model.predict(&x, &tod, &dow).unwrap();
    let yp = model.predict(&Tensor::new([m, 12, n, 3], xp).unwrap(), &tp, &dp).unwrap();
    let per_y = 12 * n * 3;
    for (i, &s) in order.iter().enumerate() {
        let a = &y.data()[s * per_y..(s + 1) * per_y];
        let b = &yp.data()[i * per_y..(i + 1) * per_y];
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()), "sample {s}");
    }
}

#[test]
fn without_the_spatial_pathway_nodes_are_independent() {
    let n = 4;
    let mut model = small(n);
    let ws = model.w_spatial;
    model.params.get_mut(ws).value = Tensor::zeros([1]);
    let (x, tod, dow) = inputs(2, n);
    // swap the inputs of nodes 0 and 1; the last node is the probe, since the
    // spatial scan runs along node order
    let mut xs = x.clone();
    for s in 0..2 {
        for k in 0..12 {
            for c in 0..3 {
                let at = |v: usize| ((s * 12 + k) * n + v) * 3 + c;
                xs.data_mut().swap(at(0), at(1));
            }
        }
    }
    let y = model.predict(&x, &tod, &dow).unwrap();
    let ys = model.predict(&xs, &tod, &dow).unwrap();
    for s in 0..2 {
        for k in 0..12 {
            for c in 0..3 {
                let at = ((s * 12 + k) * n + n - 1) * 3 + c;
                assert_eq!(y.data()[at].to_bits(), ys.data()[at].to_bits());
            }
        }
    }
    // and with the pathway on, the probe does see its neighbours
    model.params.get_mut(ws).value = Tensor::full([1], 0.5);
    let y = model.predict(&x, &tod, &dow).unwrap();
    let ys = model.predict(&xs, &tod, &dow).unwrap();
    let probe = |t: &Tensor| -> Vec<u64> { (0..12).flat_map(|k| (0..3).map(move |c| (k, c))).map(|(k, c)| t.data()[(k * n + n - 1) * 3 + c].to_bits()).collect() };
    assert_ne!(probe(&y), probe(&ys));
}

#[test]
fn zeroing_temporal_weight_cuts_temporal_gradients() {
    let mut model = small(3);
    let wt = model.w_temporal;
    model.params.get_mut(wt).value = Tensor::zeros([1]);
    let (x, tod, dow) = inputs(2, 3);
    let tape = Tape::new();
    let p = model.params.bind(&tape, true);
    let y = model.forward(&p, tape.constant(x), &tod, &dow, None).unwrap();
    let mut g = tape.backward(y.square().unwrap().sum().unwrap()).unwrap();
    model.params.absorb_grads(&p, &mut g);
    for id in model.temporal_param_ids() {
        let prm = model.params.get(id);
        assert!(prm.grad.as_ref().unwrap().data().iter().all(|&v| v == 0.0), "{}", prm.name);
    }
    for id in model.spatial_param_ids() {
        let prm = model.params.get(id);
        if prm.name.ends_with("in_proj") {
            assert!(prm.grad.as_ref().unwrap().data().iter().any(|&v| v != 0.0));
        }
    }
}

#[test]
fn finite_at_initialisation_for_large_inputs() {
    let model = small(3);
    let (_, tod, dow) = inputs(2, 3);
    for sign in [-1.0, 1.0] {
        let x = Tensor::from_fn([2, 12, 3, 3], |i| sign * if i % 2 == 0 { 10.0 } else { 9.5 });
        let y = model.predict(&x, &tod, &dow).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn reloaded_checkpoint_reproduces_forward() {
    let model = small(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model.params, &path).unwrap();
    let stored = checkpoint::load(&path).unwrap();
    let names: Vec<_> = model.params.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
    let back: Vec<_> = stored.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
    assert_eq!(names, back);
    let loaded = MCSTModel::from_params(&stored).unwrap();
    let (x, tod, dow) = inputs(3, 5);
    assert!(model.predict(&x, &tod, &dow).unwrap().bitwise_eq(&loaded.predict(&x, &tod, &dow).unwrap()));
}

#[test]
fn reshapes_are_bijections_with_the_right_layout() {
    let (m, t, n, d) = (2, 4, 3, 5);
    let e = Tensor::from_fn([m, t, n, d], |i| i as f64);
    let rt = reshape_temporal(&e).unwrap();
    assert_eq!(rt.shape(), &[6, 4, 5]);
    let rs = reshape_spatial(&e).unwrap();
    assert_eq!(rs.shape(), &[8, 3, 5]);
    for s in 0..m {
        for k in 0..t {
            for v in 0..n {
                for j in 0..d {
                    let src = e.at(&[s, k, v, j]);
                    assert_eq!(rt.at(&[s * n + v, k, j]), src);
                    assert_eq!(rs.at(&[s * t + k, v, j]), src);
                }
            }
        }
    }
    assert!(unreshape_temporal(&rt, m, n).unwrap().bitwise_eq(&e));
    assert!(unreshape_spatial(&rs, m, t).unwrap().bitwise_eq(&e));
}

#[test]
fn fusion_identities_and_weight_gradient() {
    let yt = Tensor::from_fn([2, 3, 2, 4], |i| (i as f64 * 0.3).sin());
    let ys = Tensor::from_fn([2, 3, 2, 4], |i| (i as f64 * 0.7).cos());
    let tape = Tape::new();
    let one = tape.constant(Tensor::full([1], 1.0));
    let zero = tape.constant(Tensor::zeros([1]));
    let out = combine_pathways(tape.constant(yt.clone()), tape.constant(ys.clone()), one, zero).unwrap();
    assert!(out.value().bitwise_eq(&yt));
    let out = combine_pathways(
        tape.constant(yt.clone()),
        tape.constant(yt.clone()),
        tape.constant(Tensor::full([1], 0.25)),
        tape.constant(Tensor::full([1], 0.75)),
    )
    .unwrap();
    assert!(out.value().max_abs_diff(&yt) < 1e-15);

    // loss = sum(Y_c ⊙ R): dL/dw_t = sum(Y_t ⊙ R)
    let r = Tensor::from_fn([2, 3, 2, 4], |i| (i % 5) as f64 - 2.0);
    let loss_at = |wt: f64| -> f64 {
        let tape = Tape::new();
        let c = combine_pathways(
            tape.constant(yt.clone()),
            tape.constant(ys.clone()),
            tape.constant(Tensor::full([1], wt)),
            tape.constant(Tensor::full([1], 0.5)),
        )
        .unwrap();
        c.mul(tape.constant(r.clone())).unwrap().sum().unwrap().value().item().unwrap()
    };
    let tape = Tape::new();
    let wt = tape.param(Tensor::full([1], 0.5));
    let c = combine_pathways(tape.constant(yt.clone()), tape.constant(ys.clone()), wt, tape.constant(Tensor::full([1], 0.5))).unwrap();
    let g = tape.backward(c.mul(tape.constant(r.clone())).unwrap().sum().unwrap()).unwrap();
    let analytic = g.get(wt).unwrap()[0];
    let closed: f64 = yt.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    let eps = 1e-6;
    let numeric = (loss_at(0.5 + eps) - loss_at(0.5 - eps)) / (2.0 * eps);
    assert!((analytic - closed).abs() <= 1e-12 * closed.abs().max(1.0));
    assert!((analytic - numeric).abs() / analytic.abs() < 1e-5);
}

#[test]
fn concat_feeds_projection_at_full_width() {
    let model = MCSTModel::new(ModelConfig::new(2), 0).unwrap();
    let (x, tod, dow) = inputs(1, 2);
    let tape = Tape::new();
    let p = model.params.bind(&tape, false);
    let z = model.tables.assemble(&p, tape.constant(x), &tod, &dow).unwrap();
    assert_eq!(z.shape(), &[1, 12, 2, 168]);
    let e = model.tables.project(&p, z).unwrap();
    assert_eq!(e.shape(), &[1, 12, 2, 96]);
    let a = tape.constant(Tensor::zeros([1, 2]));
    assert_eq!(concat_last(&[a, a]).unwrap().shape(), &[1, 4]);
}
