//! Supervised contrastive loss over a single-view batch.
//!
//! For anchor `i` with positives `P(i) = {j != i : y_j = y_i}` and contrast set
//! `A(i) = {a != i}`:
//!
//! ```text
//! L_i = -(1/|P(i)|) * sum_{p in P(i)} log( exp(s_ip / t) / sum_{a in A(i)} exp(s_ia / t) )
//! ```
//!
//! where `s_ij = z_i . z_j`. Anchors without positives contribute nothing.
//! The batch loss is the plain sum over anchors.

use crate::error::{Result, ScdaError};
use crate::linalg::{dot, norm, Matrix};

/// Maximum row-norm deviation accepted by [`supcon_loss`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LossBatch<'a> {
    pub reps: &'a Matrix,
    pub labels: &'a [usize],
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// d loss / d reps, same shape as the batch.
    pub grad: Matrix,
    pub anchors_used: usize,
}

fn check_batch(batch: &LossBatch<'_>) -> Result<()> {
    if !(batch.temperature > 0.0) || !batch.temperature.is_finite() {
        return Err(ScdaError::NonPositiveTemperature(batch.temperature));
    }
    if batch.reps.rows() != batch.labels.len() {
        return Err(ScdaError::ShapeMismatch(format!(
            "{} representations but {} labels",
            batch.reps.rows(),
            batch.labels.len()
        )));
    }
    if batch.reps.rows() < 2 {
        return Err(ScdaError::BatchTooSmall(batch.reps.rows()));
    }
    Ok(())
}

fn check_unit_rows(reps: &Matrix) -> Result<()> {
    for (row, r) in reps.row_iter().enumerate() {
        let n = norm(r);
        if !((n - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
            return Err(ScdaError::UnnormalizedInput { row, norm: n });
        }
    }
    Ok(())
}

/// Gram matrix of a batch of unit-norm rows.
pub fn pairwise_similarity(reps: &Matrix) -> Result<Matrix> {
    check_unit_rows(reps)?;
    Ok(gram(reps))
}

fn gram(reps: &Matrix) -> Matrix {
    let b = reps.rows();
    let mut s = Matrix::zeros(b, b);
    for i in 0..b {
        for j in i..b {
            let v = dot(reps.row(i), reps.row(j));
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Loss and gradient for a batch of unit-norm representations.
pub fn supcon_loss(batch: &LossBatch<'_>) -> Result<LossResult> {
    check_batch(batch)?;
    check_unit_rows(batch.reps)?;
    Ok(evaluate(batch))
}

/// Same computation as [`supcon_loss`] without the unit-norm check, so that
/// callers can probe the objective at slightly perturbed inputs (finite
/// differences).
pub fn supcon_objective(batch: &LossBatch<'_>) -> Result<LossResult> {
    check_batch(batch)?;
    Ok(evaluate(batch))
}

fn evaluate(batch: &LossBatch<'_>) -> LossResult {
    let reps = batch.reps;
    let labels = batch.labels;
    let tau = batch.temperature;
    let b = reps.rows();
    let raw = gram(reps);

    // coef[i][j] = dL/ds_ij seen from anchor i
    let mut coef = Matrix::zeros(b, b);
    let mut loss = 0.0;
    let mut anchors_used = 0;
    let mut logits = vec![0.0; b];
    for i in 0..b {
        let n_pos = (0..b).filter(|&j| j != i && labels[j] == labels[i]).count();
        if n_pos == 0 {
            continue;
        }
        anchors_used += 1;
        let mut max = f64::NEG_INFINITY;
        for j in 0..b {
            if j != i {
                logits[j] = raw[(i, j)].clamp(-1.0, 1.0) / tau;
                max = max.max(logits[j]);
            }
        }
        let mut denom = 0.0;
        for j in 0..b {
            if j != i {
                denom += (logits[j] - max).exp();
            }
        }
        let lse = max + denom.ln();
        let mut pos_sum = 0.0;
        for j in 0..b {
            if j != i && labels[j] == labels[i] {
                pos_sum += logits[j];
            }
        }
        loss += lse - pos_sum / n_pos as f64;

        for j in 0..b {
            if j == i {
                continue;
            }
            let s = raw[(i, j)];
            if !(-1.0..=1.0).contains(&s) {
                // clamped: no gradient through this similarity
                continue;
            }
            let soft = (logits[j] - lse).exp();
            let target = if labels[j] == labels[i] { 1.0 / n_pos as f64 } else { 0.0 };
            coef[(i, j)] = (soft - target) / tau;
        }
    }

    let d = reps.cols();
    let mut grad = Matrix::zeros(b, d);
    for i in 0..b {
        let g = grad.row_mut(i);
        for j in 0..b {
            if j == i {
                continue;
            }
            let w = coef[(i, j)] + coef[(j, i)];
            if w == 0.0 {
                continue;
            }
            for (gk, zk) in g.iter_mut().zip(reps.row(j)) {
                *gk += w * zk;
            }
        }
    }

    LossResult { loss, grad, anchors_used }
}
