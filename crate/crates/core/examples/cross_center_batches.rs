//! Builds cross-center batches: every batch holds every class from every
//! center, topping up small cells with replacement.

use scda::sampler::{check_feasibility, make_batches, BatchSpec, QuotaOverride, TrainingPool};

fn main() -> scda::Result<()> {
    // 3 classes x 2 centers; class 2 at center 1 has a single slide
    let labels = vec![0, 0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 1, 2];
    let centers = vec![0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    let pool = TrainingPool::new(labels.clone(), centers.clone(), 3, 2)?;

    let spec = BatchSpec {
        quota_per_cell: 2,
        overrides: vec![QuotaOverride { class: 0, center: 0, quota: 3 }],
        steps_per_epoch: 4,
        ..BatchSpec::default()
    };
    let report = check_feasibility(&pool, &spec)?;
    for c in &report.cells {
        println!("cell {:?}: {} available, quota {}", c.cell, c.available, c.quota);
    }
    println!("feasible without replacement: {}", report.feasible_without_replacement);

    let plan = make_batches(&pool, &spec, 7)?;
    for (k, b) in plan.batches.iter().enumerate() {
        let cells: Vec<(usize, usize)> = b.iter().map(|&i| (labels[i], centers[i])).collect();
        println!("batch {k}: {b:?}  cells {cells:?}");
    }

    let strict = BatchSpec { allow_replacement: false, ..spec };
    if let Err(e) = make_batches(&pool, &strict, 7) {
        println!("without replacement: {e}");
    }
    Ok(())
}
