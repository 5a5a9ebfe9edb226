//! 2-D PCA of slide embeddings before and after adaptation; writes CSV and
//! SVG scatter plots to the directory given as the first argument.

use scda::harness::DatasetView;
use scda::sampler::TrainingPool;
use scda::{generate, pca2d, split_dataset, train, transform, Split, SynthConfig, TrainConfig};

fn main() -> scda::Result<()> {
    let out = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let ds = generate(&SynthConfig::default())?;
    let m = split_dataset(&ds.manifest, 0.8, 0)?;
    let z = ds.embeddings()?;
    DatasetView::new(&m, &z)?;

    let idx = m.select(Split::Train, &[0, 1]);
    let pool = TrainingPool::new(
        idx.iter().map(|&i| m.label(i)).collect(),
        idx.iter().map(|&i| m.center(i)).collect(),
        m.classes.len(),
        m.centers.len(),
    )?;
    let head = train(&z.select_rows(&idx), &pool, &TrainConfig::default())?.final_head;

    for (name, data) in [("raw", z.clone()), ("adapted", transform(&head, &z)?)] {
        let p = pca2d(&data)?;
        p.write_csv(&out.join(format!("projection_{name}.csv")), &m)?;
        let svg = p.to_svg(&m, &format!("{name}: {:.0}% variance", 100.0 * p.explained_variance_fraction));
        std::fs::write(out.join(format!("projection_{name}.svg")), svg).map_err(|e| scda::ScdaError::io(&out, e))?;
        println!("{name:>8}: top-2 variance fraction {:.3}", p.explained_variance_fraction);
    }
    println!("wrote projections to {}", out.display());
    Ok(())
}
