use mcst::checkpoint;
use mcst::config::RunConfig;
use mcst::data::{split_chronological, window_starts, Normalizer};
use mcst::model::{reshape_spatial, reshape_temporal, unreshape_spatial, unreshape_temporal};
use mcst::params::ParamStore;
use mcst::ssm::ScanInstance;
use mcst::training::compute_metrics;
use mcst::Tensor;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1e3f64..1e3, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

fn block() -> impl Strategy<Value = Tensor> {
    (1usize..4, 1usize..5, 1usize..4, 1usize..6).prop_flat_map(|(m, t, n, d)| tensor(vec![m, t, n, d]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reshapes_round_trip(e in block()) {
        let [m, t, n, _] = *e.shape() else { unreachable!() };
        prop_assert!(unreshape_temporal(&reshape_temporal(&e).unwrap(), m, n).unwrap().bitwise_eq(&e));
        prop_assert!(unreshape_spatial(&reshape_spatial(&e).unwrap(), m, t).unwrap().bitwise_eq(&e));
    }

    #[test]
    fn mae_never_exceeds_rmse(p in block(), seed in any::<u64>()) {
        let y = Tensor::from_fn(p.shape().to_vec(), |i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 - 500.0);
        let r = compute_metrics(&p, &y).unwrap();
        prop_assert!(r.mae() <= r.rmse());
        prop_assert!(r.mae() >= 0.0 && r.mape() >= 0.0);
    }

    #[test]
    fn metrics_ignore_sample_order(p in block(), rot in 0usize..3) {
        let m = p.shape()[0];
        let per = p.numel() / m;
        let y = Tensor::from_fn(p.shape().to_vec(), |i| (i as f64 * 0.61).sin() * 100.0 + 50.0);
        let rotate = |t: &Tensor| {
            let mut v = t.data().to_vec();
            v.rotate_left((rot % m) * per);
            Tensor::new(t.shape().to_vec(), v).unwrap()
        };
        let a = compute_metrics(&p, &y).unwrap();
        let b = compute_metrics(&rotate(&p), &rotate(&y)).unwrap();
        prop_assert!((a.mae() - b.mae()).abs() <= 1e-12 * a.mae().max(1.0));
        prop_assert!((a.rmse() - b.rmse()).abs() <= 1e-12 * a.rmse().max(1.0));
        prop_assert!((a.mape() - b.mape()).abs() <= 1e-12 * a.mape().max(1.0));
    }

    #[test]
    fn normalisation_round_trip(x in (10usize..40, 1usize..4).prop_flat_map(|(t, n)| tensor(vec![t, n, 3]))) {
        let t = x.shape()[0];
        let norm = Normalizer::fit(&x, 0..t / 2 + 1).unwrap();
        let back = norm.invert(&norm.apply(&x).unwrap()).unwrap();
        let scale = x.data().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        prop_assert!(back.max_abs_diff(&x) <= 1e-12 * scale);
    }

    #[test]
    fn splits_partition_and_windows_count(t in 24usize..5000) {
        if let Ok(s) = split_chronological(t) {
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, t);
            prop_assert_eq!(s.train.len(), t * 7 / 10);
            prop_assert_eq!(s.val.len(), t / 10);
            for r in [s.train, s.val, s.test] {
                let n = window_starts(r.clone(), 12, 12).map_or(0, |w| w.len());
                prop_assert_eq!(n, r.len().saturating_sub(23));
            }
        }
    }

    #[test]
    fn chunked_scan_matches_sequential(l in 1usize..80, d in 1usize..6, n in 1usize..6, chunk in 1usize..90, seed in any::<u64>()) {
        let inst = ScanInstance::random(l, d, n, seed).unwrap();
        let (seq, s_stats) = inst.sequential().unwrap();
        let (par, _) = inst.parallel(chunk).unwrap();
        prop_assert!(par.max_abs_diff(&seq) < 1e-10);
        if chunk >= l {
            prop_assert!(par.bitwise_eq(&seq));
        }
        prop_assert!(s_stats.flops > 0);
    }

    #[test]
    fn checkpoint_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 1..6)) {
        let mut store = ParamStore::new();
        for (i, s) in shapes.iter().enumerate() {
            let t = Tensor::from_fn(s.clone(), |k| (k as f64 + i as f64) * -0.37);
            store.add(format!("p.{i}"), t).unwrap();
        }
        let back = checkpoint::decode(&checkpoint::encode(&store).unwrap()).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for (a, b) in store.iter().zip(back.iter()) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert!(a.value.bitwise_eq(&b.value));
        }
    }

    #[test]
    fn config_echo_is_a_fixed_point(seed in any::<u64>(), lr in 1e-5f64..1e-1, epochs in 1usize..500, drop in 0.0f64..0.9) {
        let text = format!("[data]\nseed = {seed}\n[model]\ndropout = {drop}\n[train]\nlr_init = {lr}\nmax_epochs = {epochs}\n");
        let cfg = RunConfig::parse(&text).unwrap();
        let echo = cfg.to_ini();
        let again = RunConfig::parse(&echo).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_ini(), echo);
    }
}
