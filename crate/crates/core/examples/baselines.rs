//! Scores the inertia and mean historical forecasts on synthetic data and
//! prints the pooled, per-channel and per-horizon errors.

use mcst::data::{synthetic_generate, Dataset, Split};
use mcst::training::{compute_metrics, evaluate_baseline, BaselineMode};
use mcst::Tensor;

fn main() -> mcst::Result<()> {
    let col = |v: &[f64]| Tensor::new([v.len(), 1, 1, 1], v.to_vec());
    let r = compute_metrics(&col(&[1.0, 5.0])?, &col(&[2.0, 4.0])?)?;
    println!("hand example: mae {} rmse {} mape {}%", r.mae(), r.rmse(), r.mape());

    let data = Dataset::prepare(synthetic_generate(6, 3, 1)?)?;
    let test = data.windows(Split::Test, 12, 12)?;
    for mode in [BaselineMode::Inertia, BaselineMode::Mean] {
        let r = evaluate_baseline(&test, &data.normalizer, mode)?;
        println!("\n{mode:?}: mae {:.3} rmse {:.3} mape {:.2}%", r.mae(), r.rmse(), r.mape());
        for (name, s) in r.channel_names.iter().zip(&r.per_channel) {
            println!("  {name:<10} mae {:>8.3}  mape excluded {:.3}", s.mae, s.mape_excluded);
        }
        let by_h: Vec<String> = r.per_horizon.iter().map(|s| format!("{:.2}", s.mae)).collect();
        println!("  mae by horizon: {}", by_h.join(" "));
    }
    Ok(())
}
