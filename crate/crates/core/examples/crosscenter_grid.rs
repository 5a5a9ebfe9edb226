//! The cross-center grid: train on A, B, or both, with and without
//! adaptation, and score every test split.

use scda::config::GridConfig;
use scda::{generate, run_crosscenter_grid, split_dataset, DatasetView, SynthConfig, TrainConfig};

fn main() -> scda::Result<()> {
    let ds = generate(&SynthConfig::default())?;
    let m = split_dataset(&ds.manifest, 0.8, 0)?;
    let z = ds.embeddings()?;
    let view = DatasetView::new(&m, &z)?;
    let grid = GridConfig { seeds: vec![0, 1, 2], ..GridConfig::default() };

    let report = run_crosscenter_grid(&view, &TrainConfig::default(), &grid.methods, &grid.seeds)?;
    println!("{:<6} {:<6} {:>8} {:>8} {:>8}", "method", "train", "A", "B", "A+B");
    for method in ["raw", "scda"] {
        for train in ["A", "B", "A+B"] {
            let cell = |test| report.mean(method, train, test, "all").unwrap_or(f64::NAN);
            println!("{method:<6} {train:<6} {:>8.3} {:>8.3} {:>8.3}", cell("A"), cell("B"), cell("A+B"));
        }
    }
    Ok(())
}
