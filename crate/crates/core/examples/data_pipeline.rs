//! Generates a synthetic dataset, writes and reloads it, then walks the
//! chronological splits, normaliser and sliding windows.

use mcst::data::{load_dataset, save_dataset, synthetic_generate, Dataset, Split, CHANNEL_NAMES};

fn main() -> mcst::Result<()> {
    let file = synthetic_generate(4, 7, 3)?;
    let dir = std::env::temp_dir().join("mcst-data-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let path = dir.join("week.mctd");
    save_dataset(&file, &path)?;
    let file = load_dataset(&path)?;
    println!("{}: {} steps x {} nodes, ids {:?}", path.display(), file.steps(), file.nodes(), file.sensor_ids);

    let data = Dataset::prepare(file)?;
    println!("train {:?}  val {:?}  test {:?}", data.splits.train, data.splits.val, data.splits.test);
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        println!("{name:<10} mean {:>8.3}  std {:>8.3}", data.normalizer.mean[c], data.normalizer.std[c]);
    }

    for split in [Split::Train, Split::Val, Split::Test] {
        let w = data.windows(split, 12, 12)?;
        println!("{split:?}: {} windows", w.len());
    }

    let w = data.windows(Split::Train, 12, 12)?;
    let batch = w.batches(64, Some((1, 0)))?.next().expect("at least one batch");
    println!(
        "first shuffled batch: x {:?}, y {:?}, starts {:?}...",
        batch.x.shape(),
        batch.y.shape(),
        &batch.starts[..4]
    );
    Ok(())
}
