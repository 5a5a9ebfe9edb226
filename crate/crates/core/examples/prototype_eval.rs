//! Nearest-prototype classification and balanced accuracy, within and across
//! centers, on raw pooled embeddings.

use scda::embedding::normalize_rows;
use scda::{balanced_accuracy, build_prototypes, evaluate, generate, split_dataset, Split, SynthConfig};

fn main() -> scda::Result<()> {
    let ds = generate(&SynthConfig::default())?;
    let m = split_dataset(&ds.manifest, 0.8, 0)?;
    let z = normalize_rows(&ds.embeddings()?)?;

    let train_a = m.select(Split::Train, &[0]);
    let labels = |idx: &[usize]| idx.iter().map(|&i| m.label(i)).collect::<Vec<_>>();
    let bank = build_prototypes(&z.select_rows(&train_a), &labels(&train_a), m.classes.len(), &m.classes)?;

    for (h, name) in m.centers.iter().enumerate() {
        let test = m.select(Split::Test, &[h]);
        let cm = evaluate(&bank, &z.select_rows(&test), &labels(&test))?;
        let b = balanced_accuracy(&cm)?;
        println!("prototypes from A, test {name}: BACC {:.3}, accuracy {:.3}", b.value, cm.accuracy());
        for (c, row) in cm.counts.iter().enumerate() {
            println!("  {:>4} {row:?}", m.classes[c]);
        }
    }
    Ok(())
}
