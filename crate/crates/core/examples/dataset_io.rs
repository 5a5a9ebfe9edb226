//! Dataset persistence: patch bags and pooled embeddings in the SCDA1 binary
//! format, described by a JSON manifest.

use scda::format::{load_bags, save_bags};
use scda::{bgap, generate, load_embeddings, save_embeddings, split_dataset, SynthConfig};

fn main() -> scda::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("scda-dataset"), Into::into);
    let ds = generate(&SynthConfig::default().with_uniform_cells(4))?;
    let manifest = split_dataset(&ds.manifest, 0.75, 1)?;
    let path = dir.join("dataset.json");

    save_bags(&path, &manifest, &ds.bags)?;
    let (m, bags) = load_bags(&path)?;
    println!("{} slides, {} patches in the first bag", m.slides.len(), bags[0].patches.rows());
    assert_eq!(bags, ds.bags);

    let pooled = ds.embeddings()?;
    save_embeddings(&path, &m, &pooled)?;
    let (m, z) = load_embeddings(&path)?;
    // payloads are f32: patches were generated at f32 precision, pooled means are rounded
    let err = z.max_abs_diff(&pooled);
    assert!(err < 1e-6);
    let first = bgap(&bags[0])?.z;
    assert!(z.row(0).iter().zip(&first).all(|(a, b)| (a - b).abs() < 1e-6));
    println!(
        "embeddings {}x{} round-tripped (max f32 rounding {err:.1e}); manifest at {}",
        z.rows(),
        z.cols(),
        path.display()
    );
    println!("first slide: {} ({}, {})", m.slides[0].id, m.slides[0].center, m.slides[0].class);
    Ok(())
}
