//! Macenko H&E stain estimation and normalization.
//!
//! Pixels are converted to optical density (Beer-Lambert, base 10), the
//! background is dropped, and the two stain directions are read off as the
//! extreme angles of the tissue OD cloud inside its principal plane.
//! Normalization re-expresses each pixel's stain concentrations in a target
//! stain basis, rescaled by the ratio of robust maximum concentrations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdaError};
use crate::format::write_bytes;
use crate::linalg::{symmetric_eigen_desc, Matrix};

pub type Od = [f64; 3];

/// 8-bit RGB image, row-major pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ScdaError::InvalidImage(format!("{width}x{height} image")));
        }
        if pixels.len() != width * height {
            return Err(ScdaError::InvalidImage(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, px: [u8; 3]) -> Result<Self> {
        RgbImage::new(width, height, vec![px; width * height])
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3 + 20);
        write!(out, "P6\n{} {}\n255\n", self.width, self.height).expect("vec write");
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(ScdaError::InvalidImage("truncated PPM header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
        }
        if fields[0] != "P6" {
            return Err(ScdaError::InvalidImage(format!("unsupported PPM magic `{}`", fields[0])));
        }
        let parse =
            |s: &str| s.parse::<usize>().map_err(|_| ScdaError::InvalidImage(format!("bad PPM header field `{s}`")));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(ScdaError::InvalidImage(format!("maxval {maxval}, only 255 is supported")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(ScdaError::InvalidImage("truncated PPM raster".into()));
        }
        let pixels = bytes[pos..pos + need].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        RgbImage::new(width, height, pixels)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_ppm())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| ScdaError::io(path, e))?;
        RgbImage::from_ppm(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacenkoParams {
    /// Transmitted-light white point.
    pub io_reference: f64,
    /// Minimum per-channel OD for a pixel to count as tissue.
    pub beta: f64,
    /// Angle percentile; the stain directions come from `alpha` and `100 - alpha`.
    pub alpha: f64,
    pub concentration_percentile: f64,
}

impl Default for MacenkoParams {
    fn default() -> Self {
        MacenkoParams { io_reference: 255.0, beta: 0.15, alpha: 1.0, concentration_percentile: 99.0 }
    }
}

impl MacenkoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 50.0) {
            return Err(ScdaError::InvalidConfig("alpha must lie in (0, 50)".into()));
        }
        if !(self.beta > 0.0) {
            return Err(ScdaError::InvalidConfig("beta must be positive".into()));
        }
        if !(self.io_reference > 0.0) {
            return Err(ScdaError::InvalidConfig("io_reference must be positive".into()));
        }
        if !(self.concentration_percentile > 0.0 && self.concentration_percentile <= 100.0) {
            return Err(ScdaError::InvalidConfig("concentration_percentile must lie in (0, 100]".into()));
        }
        Ok(())
    }
}

/// Two unit stain OD vectors (hematoxylin first) and their robust maximum
/// concentrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StainProfile {
    /// `stain_vectors[k]` is column `k` of the 3x2 stain matrix.
    pub stain_vectors: [Od; 2],
    pub max_concentrations: [f64; 2],
}

pub const MIN_TISSUE_PIXELS: usize = 100;
const MIN_STAIN_ANGLE_DEG: f64 = 1.0;

impl StainProfile {
    pub fn validate(&self) -> Result<()> {
        for v in &self.stain_vectors {
            let n = norm3(v);
            if (n - 1.0).abs() > 1e-9 || v.iter().any(|&x| x < 0.0) {
                return Err(ScdaError::InvalidConfig(format!("stain vector {v:?} must be unit norm and nonnegative")));
            }
        }
        let angle = angle_deg(&self.stain_vectors[0], &self.stain_vectors[1]);
        if angle < MIN_STAIN_ANGLE_DEG {
            return Err(ScdaError::DegenerateStains(angle));
        }
        if self.max_concentrations.iter().any(|&c| !(c > 0.0)) {
            return Err(ScdaError::InvalidConfig("max concentrations must be positive".into()));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_bytes(path, s.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScdaError::io(path, e))?;
        let p: StainProfile = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    /// Least-squares concentrations of one OD vector, negatives clamped to 0.
    pub fn concentrations(&self, od: &Od) -> [f64; 2] {
        let [h, e] = &self.stain_vectors;
        let (hh, he, ee) = (dot3(h, h), dot3(h, e), dot3(e, e));
        let det = hh * ee - he * he;
        let (bh, be) = (dot3(h, od), dot3(e, od));
        let ch = (ee * bh - he * be) / det;
        let ce = (hh * be - he * bh) / det;
        [ch.max(0.0), ce.max(0.0)]
    }

    pub fn od_of(&self, c: [f64; 2]) -> Od {
        let [h, e] = &self.stain_vectors;
        [h[0] * c[0] + e[0] * c[1], h[1] * c[0] + e[1] * c[1], h[2] * c[0] + e[2] * c[1]]
    }
}

fn dot3(a: &Od, b: &Od) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &Od) -> f64 {
    dot3(a, a).sqrt()
}

/// Angle between two vectors in degrees.
pub fn angle_deg(a: &Od, b: &Od) -> f64 {
    let c = (dot3(a, b) / (norm3(a) * norm3(b))).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

pub fn pixel_to_od(px: [u8; 3], io_reference: f64) -> Od {
    px.map(|v| -(f64::from(v).max(1.0) / io_reference).log10())
}

pub fn od_to_pixel(od: &Od, io_reference: f64) -> [u8; 3] {
    od.map(|v| (io_reference * 10f64.powf(-v)).round().clamp(0.0, 255.0) as u8)
}

pub fn rgb_to_od(image: &RgbImage, io_reference: f64) -> Vec<Od> {
    image.pixels.iter().map(|&p| pixel_to_od(p, io_reference)).collect()
}

pub fn od_to_rgb(od: &[Od], width: usize, height: usize, io_reference: f64) -> Result<RgbImage> {
    RgbImage::new(width, height, od.iter().map(|o| od_to_pixel(o, io_reference)).collect())
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    percentile_sorted(values, p)
}

/// Principal plane of the tissue OD cloud: two orthonormal directions, the
/// first with the larger eigenvalue, each oriented so the mean projection is
/// nonnegative.
pub fn principal_plane(tissue: &[Od]) -> [Od; 2] {
    let n = tissue.len() as f64;
    let mut mean = [0.0; 3];
    for o in tissue {
        for k in 0..3 {
            mean[k] += o[k] / n;
        }
    }
    let mut cov = Matrix::zeros(3, 3);
    for o in tissue {
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] += (o[a] - mean[a]) * (o[b] - mean[b]);
            }
        }
    }
    let denom = (tissue.len().max(2) - 1) as f64;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
    let (_, vecs) = symmetric_eigen_desc(&cov);
    let mut plane = [[0.0; 3]; 2];
    for (k, p) in plane.iter_mut().enumerate() {
        let mut v = [vecs[(k, 0)], vecs[(k, 1)], vecs[(k, 2)]];
        let total: f64 = tissue.iter().map(|o| dot3(o, &v)).sum();
        if total < 0.0 {
            v = v.map(|x| -x);
        }
        *p = v;
    }
    plane
}

fn tissue_pixels(od: &[Od], beta: f64) -> Vec<Od> {
    od.iter().copied().filter(|o| o.iter().all(|&v| v > beta)).collect()
}

fn unit_nonnegative(v: Od) -> Od {
    let v = if v.iter().sum::<f64>() < 0.0 { v.map(|x| -x) } else { v };
    let v = v.map(|x| x.max(0.0));
    let n = norm3(&v);
    v.map(|x| x / n)
}

/// Stain profile from a list of OD vectors (one per pixel).
pub fn estimate_stain_profile_od(od: &[Od], params: &MacenkoParams) -> Result<StainProfile> {
    params.validate()?;
    let tissue = tissue_pixels(od, params.beta);
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(ScdaError::NotEnoughTissue { found: tissue.len(), needed: MIN_TISSUE_PIXELS });
    }
    let [e1, e2] = principal_plane(&tissue);
    let mut phi: Vec<f64> = tissue.iter().map(|o| dot3(o, &e2).atan2(dot3(o, &e1))).collect();
    phi.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&phi, params.alpha);
    let hi = percentile_sorted(&phi, 100.0 - params.alpha);
    let dir = |a: f64| -> Od {
        let (s, c) = a.sin_cos();
        [e1[0] * c + e2[0] * s, e1[1] * c + e2[1] * s, e1[2] * c + e2[2] * s]
    };
    let v_lo = unit_nonnegative(dir(lo));
    let v_hi = unit_nonnegative(dir(hi));
    if v_lo.iter().any(|x| !x.is_finite()) || v_hi.iter().any(|x| !x.is_finite()) {
        return Err(ScdaError::DegenerateStains(0.0));
    }
    let angle = angle_deg(&v_lo, &v_hi);
    if angle < MIN_STAIN_ANGLE_DEG {
        return Err(ScdaError::DegenerateStains(angle));
    }
    // hematoxylin absorbs more red than eosin
    let stain_vectors = if v_lo[0] >= v_hi[0] { [v_lo, v_hi] } else { [v_hi, v_lo] };
    let mut profile = StainProfile { stain_vectors, max_concentrations: [1.0, 1.0] };
    let mut ch = Vec::with_capacity(tissue.len());
    let mut ce = Vec::with_capacity(tissue.len());
    for o in &tissue {
        let c = profile.concentrations(o);
        ch.push(c[0]);
        ce.push(c[1]);
    }
    profile.max_concentrations =
        [percentile(&mut ch, params.concentration_percentile), percentile(&mut ce, params.concentration_percentile)];
    if profile.max_concentrations.iter().any(|&c| !(c > 0.0)) {
        return Err(ScdaError::DegenerateStains(angle));
    }
    Ok(profile)
}

pub fn estimate_stain_profile(image: &RgbImage, params: &MacenkoParams) -> Result<StainProfile> {
    estimate_stain_profile_od(&rgb_to_od(image, params.io_reference), params)
}

/// Re-expresses every pixel (background included) in the target stain basis.
pub fn normalize_to_target(
    image: &RgbImage,
    source: &StainProfile,
    target: &StainProfile,
    params: &MacenkoParams,
) -> Result<RgbImage> {
    params.validate()?;
    source.validate()?;
    target.validate()?;
    let scale = [
        target.max_concentrations[0] / source.max_concentrations[0],
        target.max_concentrations[1] / source.max_concentrations[1],
    ];
    let pixels = image
        .pixels
        .iter()
        .map(|&p| {
            let c = source.concentrations(&pixel_to_od(p, params.io_reference));
            let od = target.od_of([c[0] * scale[0], c[1] * scale[1]]);
            od_to_pixel(&od, params.io_reference)
        })
        .collect();
    RgbImage::new(image.width, image.height, pixels)
}

/// Estimates the source profile from the image itself, then normalizes.
pub fn normalize_image(image: &RgbImage, target: &StainProfile, params: &MacenkoParams) -> Result<RgbImage> {
    let source = estimate_stain_profile(image, params)?;
    normalize_to_target(image, &source, target, params)
}

/// Forward Beer-Lambert model: per-pixel OD from two concentration fields.
pub fn synthesize_od(profile: &StainProfile, h_field: &[f64], e_field: &[f64]) -> Result<Vec<Od>> {
    if h_field.len() != e_field.len() {
        return Err(ScdaError::ShapeMismatch(format!(
            "concentration fields have {} and {} pixels",
            h_field.len(),
            e_field.len()
        )));
    }
    if h_field.iter().chain(e_field).any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(ScdaError::NonFiniteInput("concentration fields must be finite and nonnegative".into()));
    }
    Ok(h_field.iter().zip(e_field).map(|(&h, &e)| profile.od_of([h, e])).collect())
}

pub fn synthesize_stain_image(
    profile: &StainProfile,
    h_field: &[f64],
    e_field: &[f64],
    width: usize,
    height: usize,
    io_reference: f64,
) -> Result<RgbImage> {
    if h_field.len() != width * height {
        return Err(ScdaError::ShapeMismatch(format!("{} concentrations for a {width}x{height} image", h_field.len())));
    }
    od_to_rgb(&synthesize_od(profile, h_field, e_field)?, width, height, io_reference)
}
