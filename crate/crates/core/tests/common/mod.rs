//! Helpers shared by the integration tests. The oracles here are written
//! independently of the library code they check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scda::stain::{angle_deg, rgb_to_od, synthesize_od, synthesize_stain_image, RgbImage, StainProfile};
use scda::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps this independent of rand_distr
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn unit_row(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(r)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| gaussian(r)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Unit-norm batch with labels drawn from `n_classes`.
pub fn random_batch(r: &mut ChaCha8Rng, b: usize, d: usize, n_classes: usize) -> (Matrix, Vec<usize>) {
    let rows: Vec<Vec<f64>> = (0..b).map(|_| unit_row(r, d)).collect();
    let labels = (0..b).map(|_| r.random_range(0..n_classes)).collect();
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// Direct transcription of the contrastive loss: plain exp/log, no shifts.
pub fn naive_supcon(reps: &Matrix, labels: &[usize], tau: f64) -> f64 {
    let b = reps.rows();
    let dot = |i: usize, j: usize| -> f64 { reps.row(i).iter().zip(reps.row(j)).map(|(a, c)| a * c).sum() };
    let mut total = 0.0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (dot(i, a) / tau).exp()).sum();
        let mut term = 0.0;
        for &p in &positives {
            term += -((dot(i, p) / tau).exp() / denom).ln();
        }
        total += term / positives.len() as f64;
    }
    total
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise deviation relative to the largest reference magnitude.
pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic.iter().zip(reference).fold(0.0f64, |m, (a, r)| m.max((a - r).abs())) / scale
}

/// Number of (class, center) cells missing from a batch.
pub fn constraint_violations(
    batch: &[usize],
    labels: &[usize],
    centers: &[usize],
    n_classes: usize,
    n_centers: usize,
) -> usize {
    let mut seen = vec![vec![false; n_centers]; n_classes];
    for &i in batch {
        seen[labels[i]][centers[i]] = true;
    }
    seen.iter().flatten().filter(|&&s| !s).count()
}

pub fn unit3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

/// A realistic H&E stain pair, about 22 degrees apart.
pub fn reference_stains() -> StainProfile {
    StainProfile {
        stain_vectors: [unit3([0.5626, 0.7201, 0.4062]), unit3([0.2159, 0.8012, 0.5581])],
        max_concentrations: [1.0, 1.0],
    }
}

/// Concentration fields mixing background, pure-stain, and mixed pixels.
/// Pure-stain pixels make up well over the 1% needed by the angle
/// percentiles.
pub fn stain_fields(r: &mut ChaCha8Rng, n: usize, c_max: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in 0..n {
        match r.random_range(0..10) {
            0 | 1 => {}
            2 => h[i] = r.random_range(0.3..1.0) * c_max[0],
            3 => e[i] = r.random_range(0.3..1.0) * c_max[1],
            _ => {
                h[i] = r.random_range(0.1..1.0) * c_max[0];
                e[i] = r.random_range(0.1..1.0) * c_max[1];
            }
        }
    }
    (h, e)
}

/// Interpolated percentile of an unsorted sample, written out longhand.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub const SIDE: usize = 96;

/// Random nonnegative stain pair at least 20 degrees apart, hematoxylin
/// (larger red OD) first. Every channel of each unit vector is at least 0.3
/// so that pure-stain pixels clear the tissue threshold; otherwise the
/// extreme angles come only from mixtures and no estimator of this family
/// can see the pure stain.
pub fn random_stains(r: &mut ChaCha8Rng) -> StainProfile {
    loop {
        let a = unit3([r.random_range(0.2..1.0), r.random_range(0.2..1.0), r.random_range(0.2..1.0)]);
        let b = unit3([r.random_range(0.2..1.0), r.random_range(0.2..1.0), r.random_range(0.2..1.0)]);
        let angle = angle_deg(&a, &b);
        if !(20.0..=60.0).contains(&angle) || a.iter().chain(&b).any(|&x| x < 0.3) {
            continue;
        }
        let stain_vectors = if a[0] >= b[0] { [a, b] } else { [b, a] };
        return StainProfile { stain_vectors, max_concentrations: [1.0, 1.0] };
    }
}

/// The reference H&E pair with each vector jittered by a few degrees, as
/// between two labs' staining protocols.
pub fn he_like_stains(r: &mut ChaCha8Rng) -> StainProfile {
    let base = reference_stains();
    let jitter = |v: [f64; 3], r: &mut ChaCha8Rng| unit3(v.map(|x| (x + r.random_range(-0.06..0.06)).max(0.05)));
    let stain_vectors = [jitter(base.stain_vectors[0], r), jitter(base.stain_vectors[1], r)];
    StainProfile { stain_vectors, max_concentrations: [1.0, 1.0] }
}

pub struct Scene {
    pub truth: StainProfile,
    pub image: RgbImage,
    pub h: Vec<f64>,
    pub e: Vec<f64>,
}

pub fn scene(r: &mut ChaCha8Rng, truth: StainProfile) -> Scene {
    let c_max = [r.random_range(0.8..1.5), r.random_range(0.8..1.5)];
    scene_with(r, truth, c_max)
}

pub fn scene_with(r: &mut ChaCha8Rng, truth: StainProfile, c_max: [f64; 2]) -> Scene {
    let (h, e) = stain_fields(r, SIDE * SIDE, c_max);
    let image = synthesize_stain_image(&truth, &h, &e, SIDE, SIDE, 255.0).unwrap();
    Scene { truth, image, h, e }
}

/// Reference 99th-percentile concentrations over pixels whose true OD clears
/// the tissue threshold.
pub fn true_max_concentrations(s: &Scene, beta: f64) -> [f64; 2] {
    let od = synthesize_od(&s.truth, &s.h, &s.e).unwrap();
    let tissue: Vec<usize> = (0..od.len()).filter(|&i| od[i].iter().all(|&v| v > beta)).collect();
    let hs: Vec<f64> = tissue.iter().map(|&i| s.h[i]).collect();
    let es: Vec<f64> = tissue.iter().map(|&i| s.e[i]).collect();
    [percentile(&hs, 99.0), percentile(&es, 99.0)]
}

pub fn tissue_mask(image: &RgbImage, beta: f64) -> Vec<bool> {
    rgb_to_od(image, 255.0).iter().map(|o| o.iter().all(|&v| v > beta)).collect()
}

pub fn max_tissue_change(a: &RgbImage, b: &RgbImage, mask: &[bool]) -> i32 {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|((p, q), _)| (0..3).map(move |k| (p[k] as i32 - q[k] as i32).abs()))
        .max()
        .unwrap_or(0)
}

/// Mean recall over classes present in the truth.
pub fn hand_bacc(counts: &[Vec<u64>]) -> f64 {
    let mut recalls = Vec::new();
    for (s, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total > 0 {
            recalls.push(row[s] as f64 / total as f64);
        }
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}
