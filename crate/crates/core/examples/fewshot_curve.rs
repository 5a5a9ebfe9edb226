//! Few-shot adaptation to a held-out center: BACC on both centers as the
//! number of labeled held-out slides per class grows.

use scda::{generate, run_fewshot, split_dataset, DatasetView, FewShotConfig, SynthConfig, TrainConfig};

fn main() -> scda::Result<()> {
    let ds = generate(&SynthConfig::default())?;
    let m = split_dataset(&ds.manifest, 0.8, 0)?;
    let z = ds.embeddings()?;
    let view = DatasetView::new(&m, &z)?;

    let report = run_fewshot(&view, &FewShotConfig::default(), &TrainConfig::default())?;
    println!("{:<6} {:>4} {:>16} {:>16}", "method", "k", "A (mean+-std)", "B (mean+-std)");
    let agg = report.aggregate();
    let mut keys: Vec<(String, String)> = agg.iter().map(|a| (a.method.clone(), a.k.clone())).collect();
    keys.dedup();
    for (method, k) in keys {
        let cell = |test: &str| {
            agg.iter()
                .find(|a| a.method == method && a.k == k && a.test_centers == test)
                .map_or(String::from("-"), |a| format!("{:.3}+-{:.3}", a.mean, a.std))
        };
        println!("{method:<6} {k:>4} {:>16} {:>16}", cell("A"), cell("B"));
    }
    Ok(())
}
