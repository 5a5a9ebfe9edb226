//! Deterministic 2-D PCA projection of slide embeddings, with CSV and SVG
//! export for visual inspection of center and class structure.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::DatasetManifest;
use crate::error::{Result, ScdaError};
use crate::format::write_bytes;
use crate::harness::fmt_f;
use crate::linalg::{symmetric_eigen_desc, Matrix};

const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    /// `2 x d`, orthonormal rows.
    pub basis: Matrix,
    pub mean: Vec<f64>,
    /// `B x 2`.
    pub coords: Matrix,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_fraction: f64,
}

pub fn pca2d(data: &Matrix) -> Result<Projection2D> {
    let (b, d) = (data.rows(), data.cols());
    if b < 3 || d < 2 {
        return Err(ScdaError::ShapeMismatch(format!("PCA needs at least 3 rows and 2 columns, got {b}x{d}")));
    }
    let mut mean = vec![0.0; d];
    for row in data.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut centered = data.clone();
    for i in 0..b {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.transpose().matmul(&centered)?;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= (b - 1) as f64);
    let (eigenvalues, vectors) = symmetric_eigen_desc(&cov);
    if eigenvalues.iter().filter(|&&v| v > RANK_TOLERANCE).count() < 2 {
        return Err(ScdaError::RankDeficient);
    }
    let mut basis = vectors.select_rows(&[0, 1]);
    for r in 0..2 {
        let row = basis.row_mut(r);
        let lead = row.iter().copied().reduce(|a, x| if x.abs() > a.abs() { x } else { a }).unwrap_or(0.0);
        if lead < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let coords = centered.matmul(&basis.transpose())?;
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let explained_variance_fraction = ((eigenvalues[0] + eigenvalues[1]) / total).clamp(0.0, 1.0);
    Ok(Projection2D { basis, mean, coords, eigenvalues, explained_variance_fraction })
}

impl Projection2D {
    /// Mean squared distance (with the `B - 1` denominator) between the
    /// centered data and its rank-2 reconstruction.
    pub fn reconstruction_error(&self, data: &Matrix) -> f64 {
        let b = data.rows();
        let mut err = 0.0;
        for i in 0..b {
            let (x, y) = (self.coords[(i, 0)], self.coords[(i, 1)]);
            for j in 0..data.cols() {
                let rec = self.mean[j] + x * self.basis[(0, j)] + y * self.basis[(1, j)];
                err += (data[(i, j)] - rec).powi(2);
            }
        }
        err / (b - 1) as f64
    }

    pub fn to_csv(&self, manifest: &DatasetManifest) -> Result<Vec<u8>> {
        if manifest.slides.len() != self.coords.rows() {
            return Err(ScdaError::DimensionMismatch { expected: manifest.slides.len(), found: self.coords.rows() });
        }
        let mut buf = Vec::new();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
            w.write_record(["slide_id", "center", "class", "x", "y"])?;
            for (i, s) in manifest.slides.iter().enumerate() {
                w.write_record([
                    s.id.as_str(),
                    &s.center,
                    &s.class,
                    &fmt_f(self.coords[(i, 0)]),
                    &fmt_f(self.coords[(i, 1)]),
                ])?;
            }
            w.flush().map_err(|e| ScdaError::io("<csv>", e))?;
        }
        Ok(buf)
    }

    pub fn write_csv(&self, path: &Path, manifest: &DatasetManifest) -> Result<()> {
        write_bytes(path, &self.to_csv(manifest)?)
    }

    /// Scatter plot: color by class, marker by center.
    pub fn to_svg(&self, manifest: &DatasetManifest, title: &str) -> String {
        const PALETTE: [&str; 10] = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
            "#17becf",
        ];
        const SIZE: f64 = 480.0;
        const PAD: f64 = 40.0;
        let xs: Vec<f64> = (0..self.coords.rows()).map(|i| self.coords[(i, 0)]).collect();
        let ys: Vec<f64> = (0..self.coords.rows()).map(|i| self.coords[(i, 1)]).collect();
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, (hi - lo).max(1e-12))
        };
        let (x0, xw) = range(&xs);
        let (y0, yw) = range(&ys);
        let px = |x: f64| PAD + (x - x0) / xw * (SIZE - 2.0 * PAD);
        let py = |y: f64| SIZE - PAD - (y - y0) / yw * (SIZE - 2.0 * PAD);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            SIZE / 2.0,
            escape(title)
        );
        for (i, rec) in manifest.slides.iter().enumerate().take(xs.len()) {
            let color = PALETTE[manifest.class_index(&rec.class).unwrap_or(0) % PALETTE.len()];
            let (cx, cy) = (px(xs[i]), py(ys[i]));
            match manifest.center_index(&rec.center).unwrap_or(0) % 3 {
                0 => {
                    let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.5" fill="{color}"/>"#);
                }
                1 => {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="7" height="7" fill="{color}"/>"#,
                        cx - 3.5,
                        cy - 3.5
                    );
                }
                _ => {
                    let _ = writeln!(
                        s,
                        r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
                        cx,
                        cy - 4.0,
                        cx - 4.0,
                        cy + 3.5,
                        cx + 4.0,
                        cy + 3.5
                    );
                }
            }
        }
        for (k, name) in manifest.classes.iter().enumerate() {
            let y = PAD + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y:.1}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
                SIZE - 70.0,
                PALETTE[k % PALETTE.len()],
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
