//! Trains an adaptation head on a synthetic two-center dataset and compares
//! prototype accuracy with and without it.

use scda::harness::evaluate_split;
use scda::sampler::TrainingPool;
use scda::{generate, split_dataset, train, DatasetView, Split, SynthConfig, TrainConfig};

fn main() -> scda::Result<()> {
    let ds = generate(&SynthConfig::default())?;
    let manifest = split_dataset(&ds.manifest, 0.8, 0)?;
    let z = ds.embeddings()?;
    let view = DatasetView::new(&manifest, &z)?;

    let idx = manifest.select(Split::Train, &[0, 1]);
    let pool = TrainingPool::new(
        idx.iter().map(|&i| manifest.label(i)).collect(),
        idx.iter().map(|&i| manifest.center(i)).collect(),
        manifest.classes.len(),
        manifest.centers.len(),
    )?;
    let config = TrainConfig::default();
    let report = train(&z.select_rows(&idx), &pool, &config)?;
    for step in (0..config.steps).step_by(config.steps / 10) {
        println!("step {step:>4}  loss/anchor {:.4}", report.scaled_loss_trace[step]);
    }

    for (name, head) in [("raw", None), ("adapted", Some(&report.final_head))] {
        let r = evaluate_split(&view, head, 0)?;
        for row in &r.rows {
            println!("{name:>8}  test {:<4} BACC {:.3}", row.test_centers, row.bacc);
        }
    }
    Ok(())
}
