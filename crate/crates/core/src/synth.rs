//! Synthetic multi-center slide embeddings.
//!
//! Classes are unit directions with a minimum pairwise angle. Each center
//! sees every class through its own near-orthogonal affine map: a rotation
//! on the geodesic from the identity (angles scaled by `center_shift`) plus a
//! translation of length `center_shift * translation`. Within a center the
//! class geometry is intact; across centers it is displaced.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{bgap, DatasetManifest, SlideBag, SlideRecord};
use crate::error::{Result, ScdaError};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::{self, derive_seed, tag};

/// Slides per (class, center) modeled on a two-hospital skin-tumor cohort.
pub const DEFAULT_CLASSES: [&str; 6] = ["lm", "lms", "df", "dfs", "mel", "fxa"];
pub const DEFAULT_CENTERS: [&str; 2] = ["A", "B"];
pub const DEFAULT_SLIDES_PER_CELL: [[usize; 2]; 6] = [[31, 71], [25, 26], [73, 95], [17, 44], [49, 73], [44, 60]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dim: usize,
    pub class_names: Vec<String>,
    pub center_names: Vec<String>,
    /// `slides_per_cell[class][center]`.
    pub slides_per_cell: Vec<Vec<usize>>,
    pub patches_per_slide: (usize, usize),
    /// Minimum pairwise angle between class means, degrees.
    pub class_separation: f64,
    /// Overall shift magnitude; 0 makes all centers identical in law.
    pub center_shift: f64,
    /// Largest per-plane rotation angle at `center_shift = 1`, degrees.
    pub rotation: f64,
    /// Translation length at `center_shift = 1`.
    pub translation: f64,
    /// Per-coordinate std of a slide mean around its class mean.
    pub slide_sigma: f64,
    pub patch_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 32,
            class_names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            center_names: DEFAULT_CENTERS.iter().map(|s| s.to_string()).collect(),
            slides_per_cell: DEFAULT_SLIDES_PER_CELL.iter().map(|r| r.to_vec()).collect(),
            patches_per_slide: (20, 80),
            class_separation: 60.0,
            center_shift: 1.0,
            rotation: 50.0,
            translation: 2.0,
            slide_sigma: 0.21,
            patch_noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_centers(&self) -> usize {
        self.center_names.len()
    }

    /// Same per-cell count everywhere.
    pub fn with_uniform_cells(mut self, n: usize) -> Self {
        self.slides_per_cell = vec![vec![n; self.n_centers()]; self.n_classes()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScdaError::InvalidConfig(m));
        if self.dim < 4 {
            return bad(format!("dim = {} < 4", self.dim));
        }
        if self.n_classes() < 2 || self.n_centers() < 2 {
            return bad("need at least 2 classes and 2 centers".into());
        }
        if self.slides_per_cell.len() != self.n_classes()
            || self.slides_per_cell.iter().any(|r| r.len() != self.n_centers())
        {
            return bad("slides_per_cell must be n_classes x n_centers".into());
        }
        let (lo, hi) = self.patches_per_slide;
        if lo == 0 || lo > hi {
            return bad(format!("patches_per_slide range ({lo}, {hi}) invalid"));
        }
        let mags = [
            self.class_separation,
            self.center_shift,
            self.rotation,
            self.translation,
            self.slide_sigma,
            self.patch_noise_sigma,
        ];
        if mags.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return bad("magnitudes must be finite and nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub bags: Vec<SlideBag>,
}

impl SyntheticDataset {
    /// BGAP slide embeddings, one row per manifest slide.
    pub fn embeddings(&self) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = self.bags.iter().map(|b| bgap(b).map(|e| e.z)).collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    }
}

fn gaussian_vec(d: usize, r: &mut rng::Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(r)).collect()
}

fn class_means(cfg: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    const MAX_TRIES: usize = 10_000;
    let mut r = rng::seeded(derive_seed(cfg.seed, &[tag("class-means")]));
    let min_cos = cfg.class_separation.to_radians().cos();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes());
    let mut tries = 0;
    while means.len() < cfg.n_classes() {
        tries += 1;
        if tries > MAX_TRIES {
            return Err(ScdaError::InfeasibleSeparation {
                n_classes: cfg.n_classes(),
                dim: cfg.dim,
                separation: cfg.class_separation,
            });
        }
        let v = gaussian_vec(cfg.dim, &mut r);
        let n = norm(&v);
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        if means.iter().all(|m| dot(m, &v) <= min_cos) {
            means.push(v);
        }
    }
    Ok(means)
}

/// Random orthonormal basis as rows (Gram-Schmidt on Gaussian vectors).
fn random_basis(d: usize, r: &mut rng::Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = gaussian_vec(d, r);
        for _ in 0..2 {
            for b in &rows {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&rows).expect("square")
}

/// A center's affine map `x -> x R^T + t`, stored as the rotation `R^T`.
#[derive(Debug, Clone)]
struct CenterMap {
    rotation_t: Matrix,
    translation: Vec<f64>,
}

fn center_map(cfg: &SynthConfig, center: usize) -> CenterMap {
    let d = cfg.dim;
    let mut r = rng::seeded(derive_seed(cfg.seed, &[tag("center"), center as u64]));
    let basis = random_basis(d, &mut r);
    // R = P^T G P with G a block of plane rotations; angles uniform in
    // [rotation/2, rotation], scaled toward zero by center_shift.
    let mut g = Matrix::identity(d);
    for k in 0..d / 2 {
        let frac: f64 = r.random_range(0.5..=1.0);
        let theta = (cfg.center_shift * cfg.rotation * frac).to_radians();
        let (s, c) = theta.sin_cos();
        let (a, b) = (2 * k, 2 * k + 1);
        g[(a, a)] = c;
        g[(a, b)] = -s;
        g[(b, a)] = s;
        g[(b, b)] = c;
    }
    let rot = basis.transpose().matmul(&g).and_then(|m| m.matmul(&basis)).expect("square");
    let dir = gaussian_vec(d, &mut r);
    let n = norm(&dir);
    let len = cfg.center_shift * cfg.translation;
    CenterMap { rotation_t: rot.transpose(), translation: dir.iter().map(|x| x / n * len).collect() }
}

fn quantize(v: f64) -> f64 {
    f64::from(v as f32)
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let d = cfg.dim;
    let means = class_means(cfg)?;
    let maps: Vec<CenterMap> = (0..cfg.n_centers()).map(|h| center_map(cfg, h)).collect();
    let mut manifest = DatasetManifest::new(cfg.class_names.clone(), cfg.center_names.clone());
    let mut bags = Vec::new();
    for (cls, mean) in means.iter().enumerate() {
        for (cen, map) in maps.iter().enumerate() {
            let mu = Matrix::from_vec(1, d, mean.clone()).and_then(|m| m.matmul(&map.rotation_t)).expect("dims");
            let mu: Vec<f64> = mu.as_slice().iter().zip(&map.translation).map(|(a, b)| a + b).collect();
            for k in 0..cfg.slides_per_cell[cls][cen] {
                let id = format!("{}-{}-{:03}", cfg.center_names[cen], cfg.class_names[cls], k);
                let mut r = rng::seeded(derive_seed(cfg.seed, &[tag("slide"), tag(&id)]));
                let slide_mean: Vec<f64> =
                    mu.iter().zip(gaussian_vec(d, &mut r)).map(|(m, g)| m + cfg.slide_sigma * g).collect();
                let (lo, hi) = cfg.patches_per_slide;
                let n = r.random_range(lo..=hi);
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    for m in &slide_mean {
                        let g: f64 = StandardNormal.sample(&mut r);
                        data.push(quantize(m + cfg.patch_noise_sigma * g));
                    }
                }
                manifest.slides.push(SlideRecord {
                    id: id.clone(),
                    center: cfg.center_names[cen].clone(),
                    class: cfg.class_names[cls].clone(),
                    n_patches: n,
                    file: None,
                });
                bags.push(SlideBag {
                    slide_id: id,
                    center_id: cfg.center_names[cen].clone(),
                    class_label: cls,
                    patches: Matrix::from_vec(n, d, data)?,
                });
            }
        }
    }
    Ok(SyntheticDataset { manifest, bags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cell_members;

    fn small() -> SynthConfig {
        SynthConfig { dim: 8, patches_per_slide: (3, 5), ..SynthConfig::default() }.with_uniform_cells(3)
    }

    #[test]
    fn cell_sizes_match_table() {
        let cfg = SynthConfig { patches_per_slide: (2, 3), ..SynthConfig::default() };
        let ds = generate(&cfg).unwrap();
        let cells = cell_members(&ds.manifest);
        for (c, row) in DEFAULT_SLIDES_PER_CELL.iter().enumerate() {
            for (h, &n) in row.iter().enumerate() {
                assert_eq!(cells[&(c, h)].len(), n);
            }
        }
        assert_eq!(ds.bags.len(), 608);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let m = center_map(&small(), 1);
        let rrt = m.rotation_t.matmul(&m.rotation_t.transpose()).unwrap();
        assert!(rrt.max_abs_diff(&Matrix::identity(8)) < 1e-12);
        let zero = center_map(&SynthConfig { center_shift: 0.0, ..small() }, 1);
        assert!(zero.rotation_t.max_abs_diff(&Matrix::identity(8)) < 1e-12);
        assert!(zero.translation.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn infeasible_separation() {
        let cfg = SynthConfig { dim: 4, class_separation: 120.0, ..small() };
        assert!(matches!(generate(&cfg), Err(ScdaError::InfeasibleSeparation { .. })));
    }

    #[test]
    fn patch_values_are_f32() {
        let ds = generate(&small()).unwrap();
        for b in &ds.bags {
            assert!(b.patches.as_slice().iter().all(|&v| f64::from(v as f32) == v));
        }
    }
}
