//! Slide-level data model: bags of patch embeddings, their pooled slide
//! embeddings, the dataset manifest, and the stratified train/test split.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdaError};
use crate::linalg::{norm, Matrix};
use crate::rng;

/// One slide: its patch embeddings plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideBag {
    pub slide_id: String,
    pub center_id: String,
    pub class_label: usize,
    /// N x d, one row per patch.
    pub patches: Matrix,
}

/// Pooled representation of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideEmbedding {
    pub slide_id: String,
    pub center_id: String,
    pub class_label: usize,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub id: String,
    pub center: String,
    pub class: String,
    pub n_patches: usize,
    /// Per-slide SCDA1 patch matrix, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub centers: Vec<String>,
    pub slides: Vec<SlideRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<BTreeMap<String, Split>>,
    /// Dataset-level SCDA1 slide-embedding matrix, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, centers: Vec<String>) -> Self {
        DatasetManifest { classes, centers, slides: Vec::new(), splits: None, embeddings: None }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn center_index(&self, name: &str) -> Option<usize> {
        self.centers.iter().position(|c| c == name)
    }

    /// Class index of slide `i`. Panics if the manifest has not been validated.
    pub fn label(&self, i: usize) -> usize {
        self.class_index(&self.slides[i].class).expect("validated manifest")
    }

    pub fn center(&self, i: usize) -> usize {
        self.center_index(&self.slides[i].center).expect("validated manifest")
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.slides.len()).map(|i| self.label(i)).collect()
    }

    pub fn split_of(&self, i: usize) -> Option<Split> {
        self.splits.as_ref().and_then(|s| s.get(&self.slides[i].id).copied())
    }

    /// Indices of slides in `split` whose center is one of `centers`.
    pub fn select(&self, split: Split, centers: &[usize]) -> Vec<usize> {
        (0..self.slides.len())
            .filter(|&i| self.split_of(i) == Some(split) && centers.contains(&self.center(i)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.centers.is_empty() {
            return Err(ScdaError::InvalidManifest("class and center registries must be nonempty".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.slides {
            if !seen.insert(s.id.as_str()) {
                return Err(ScdaError::InvalidManifest(format!("duplicate slide id `{}`", s.id)));
            }
            if self.class_index(&s.class).is_none() {
                return Err(ScdaError::InvalidManifest(format!("slide `{}` has unknown class `{}`", s.id, s.class)));
            }
            if self.center_index(&s.center).is_none() {
                return Err(ScdaError::InvalidManifest(format!("slide `{}` has unknown center `{}`", s.id, s.center)));
            }
        }
        if let Some(splits) = &self.splits {
            if splits.len() != self.slides.len() || self.slides.iter().any(|s| !splits.contains_key(&s.id)) {
                return Err(ScdaError::InvalidManifest("split assignments must cover every slide exactly once".into()));
            }
        }
        Ok(())
    }
}

/// Batch global average pooling: the column mean of the patch matrix.
pub fn bgap(bag: &SlideBag) -> Result<SlideEmbedding> {
    let n = bag.patches.rows();
    if n == 0 {
        return Err(ScdaError::EmptyBag(bag.slide_id.clone()));
    }
    if !bag.patches.is_finite() {
        return Err(ScdaError::NonFiniteInput(format!("bag `{}`", bag.slide_id)));
    }
    // rows are summed in sorted order so the mean is exactly permutation invariant
    let z = canonical_mean(&bag.patches);
    Ok(SlideEmbedding {
        slide_id: bag.slide_id.clone(),
        center_id: bag.center_id.clone(),
        class_label: bag.class_label,
        z,
    })
}

fn row_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

fn canonical_mean(m: &Matrix) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = m.row_iter().collect();
    rows.sort_by(|a, b| row_cmp(a, b));
    let mut sum = vec![0.0; m.cols()];
    for row in rows {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    sum.iter().map(|s| s / m.rows() as f64).collect()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= 1e-12) {
        return Err(ScdaError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Row-wise L2 normalization.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let r = l2_normalize(m.row(i))?;
        out.row_mut(i).copy_from_slice(&r);
    }
    Ok(out)
}

/// Number of training slides a cell of `n` slides contributes.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    let raw = (train_fraction * n as f64).round() as usize;
    match n {
        0 => 0,
        1 => 1,
        _ => raw.clamp(1, n - 1),
    }
}

/// Stratified split per (class, center) cell.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ScdaError::DegenerateFraction(train_fraction));
    }
    manifest.validate()?;
    let cells = cell_members(manifest);
    let mut splits = BTreeMap::new();
    for (cls, cen) in cell_keys(manifest) {
        let members = cells.get(&(cls, cen)).cloned().unwrap_or_default();
        if members.is_empty() {
            return Err(ScdaError::EmptyCell {
                class: manifest.classes[cls].clone(),
                center: manifest.centers[cen].clone(),
            });
        }
        let mut shuffled = members;
        let mut r = rng::seeded(rng::derive_seed(seed, &[cls as u64, cen as u64]));
        shuffled.shuffle(&mut r);
        let n_train = train_count(shuffled.len(), train_fraction);
        for (pos, &i) in shuffled.iter().enumerate() {
            let s = if pos < n_train { Split::Train } else { Split::Test };
            splits.insert(manifest.slides[i].id.clone(), s);
        }
    }
    let mut out = manifest.clone();
    out.splits = Some(splits);
    Ok(out)
}

fn cell_keys(m: &DatasetManifest) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..m.classes.len()).flat_map(move |c| (0..m.centers.len()).map(move |h| (c, h)))
}

/// Slide indices grouped by (class, center), in manifest order.
pub fn cell_members(m: &DatasetManifest) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..m.slides.len() {
        cells.entry((m.label(i), m.center(i))).or_default().push(i);
    }
    cells
}
