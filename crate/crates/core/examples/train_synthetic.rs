//! Trains the full-width model on three days of synthetic traffic and
//! compares its test error against the historical baselines.
//!
//! cargo run --release --example train_synthetic -- [epochs]

use mcst::data::{synthetic_generate, Dataset, Split};
use mcst::model::{MCSTModel, ModelConfig};
use mcst::training::{evaluate, evaluate_baseline, train, BaselineMode, TrainConfig};

fn main() -> mcst::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let data = Dataset::prepare(synthetic_generate(6, 3, 1)?)?;
    let mut model = MCSTModel::new(ModelConfig::new(6), 1)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &data, &cfg, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  val mae {:.3}  lr {:.2e}  {:.1}s",
            r.epoch, r.train_loss, r.val_mae, r.lr, r.seconds
        )
    })?;
    println!("best epoch {} (val mae {:.3})", outcome.best_epoch, outcome.best_val_mae);

    let test = data.windows(Split::Test, 12, 12)?;
    let ours = evaluate(&model, &test, &data.normalizer, 64)?;
    let inertia = evaluate_baseline(&test, &data.normalizer, BaselineMode::Inertia)?;
    let mean = evaluate_baseline(&test, &data.normalizer, BaselineMode::Mean)?;
    println!("test MAE  model {:.3}  inertia {:.3}  mean {:.3}", ours.mae(), inertia.mae(), mean.mae());
    println!(
        "relative to inertia {:.1}%, to mean {:.1}%",
        100.0 * (1.0 - ours.mae() / inertia.mae()),
        100.0 * (1.0 - ours.mae() / mean.mae())
    );
    Ok(())
}
