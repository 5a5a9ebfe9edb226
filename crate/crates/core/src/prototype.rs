//! Prototype classification: one unit-norm mean per class, prediction by the
//! largest dot product, plus confusion matrices and balanced accuracy.

use std::path::Path;

use crate::embedding::l2_normalize;
use crate::error::{Result, ScdaError};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `n_classes x d`, unit-norm rows.
    pub weights: Matrix,
    pub class_names: Vec<String>,
}

impl PrototypeBank {
    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    /// Similarity of `c` to every prototype.
    pub fn scores(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.weights.cols() {
            return Err(ScdaError::DimensionMismatch { expected: self.weights.cols(), found: c.len() });
        }
        Ok(self.weights.row_iter().map(|w| dot(w, c)).collect())
    }
}

/// Class prototypes from `embeddings` (rows) and their labels. Class names
/// default to the class index when `class_names` is empty.
pub fn build_prototypes(
    embeddings: &Matrix,
    labels: &[usize],
    n_classes: usize,
    class_names: &[String],
) -> Result<PrototypeBank> {
    if embeddings.rows() != labels.len() {
        return Err(ScdaError::ShapeMismatch(format!("{} embeddings but {} labels", embeddings.rows(), labels.len())));
    }
    let d = embeddings.cols();
    let mut sums = Matrix::zeros(n_classes, d);
    let mut counts = vec![0usize; n_classes];
    for (row, &y) in embeddings.row_iter().zip(labels) {
        if y >= n_classes {
            return Err(ScdaError::MissingClass(y));
        }
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut weights = Matrix::zeros(n_classes, d);
    for s in 0..n_classes {
        if counts[s] == 0 {
            return Err(ScdaError::MissingClass(s));
        }
        let mean: Vec<f64> = sums.row(s).iter().map(|v| v / counts[s] as f64).collect();
        weights.row_mut(s).copy_from_slice(&l2_normalize(&mean)?);
    }
    let class_names =
        if class_names.is_empty() { (0..n_classes).map(|s| s.to_string()).collect() } else { class_names.to_vec() };
    Ok(PrototypeBank { weights, class_names })
}

/// Index of the most similar prototype; ties go to the lowest index.
pub fn predict(bank: &PrototypeBank, c: &[f64]) -> Result<usize> {
    let scores = bank.scores(c)?;
    let mut best = 0;
    for (s, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = s;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    /// Element-wise sum; both matrices must cover the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_classes(), other.n_classes());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_classes()).map(|s| self.counts[s][s]).sum();
        diag as f64 / self.total() as f64
    }

    pub fn write_csv(&self, path: &Path, class_names: &[String]) -> Result<()> {
        let mut buf = Vec::new();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
            let mut header = vec!["true\\predicted".to_string()];
            header.extend(class_names.iter().cloned());
            w.write_record(&header)?;
            for (s, row) in self.counts.iter().enumerate() {
                let mut rec = vec![class_names.get(s).cloned().unwrap_or_else(|| s.to_string())];
                rec.extend(row.iter().map(|c| c.to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| ScdaError::io(path, e))?;
        }
        crate::format::write_bytes(path, &buf)
    }
}

pub fn evaluate(bank: &PrototypeBank, embeddings: &Matrix, labels: &[usize]) -> Result<ConfusionMatrix> {
    if embeddings.rows() == 0 {
        return Err(ScdaError::EmptyInput("test set".into()));
    }
    if embeddings.rows() != labels.len() {
        return Err(ScdaError::ShapeMismatch(format!("{} embeddings but {} labels", embeddings.rows(), labels.len())));
    }
    let mut cm = ConfusionMatrix::new(bank.n_classes());
    for (row, &y) in embeddings.row_iter().zip(labels) {
        if y >= bank.n_classes() {
            return Err(ScdaError::MissingClass(y));
        }
        cm.record(y, predict(bank, row)?);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedAccuracy {
    pub value: f64,
    /// Set when at least one class had no test samples and was left out.
    pub missing_classes: bool,
}

/// Mean per-class recall over classes present in the matrix.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<BalancedAccuracy> {
    let mut sum = 0.0;
    let mut present = 0usize;
    for (s, row) in cm.counts.iter().enumerate() {
        let n: u64 = row.iter().sum();
        if n == 0 {
            continue;
        }
        sum += row[s] as f64 / n as f64;
        present += 1;
    }
    if present == 0 {
        return Err(ScdaError::EmptyMatrix);
    }
    Ok(BalancedAccuracy { value: sum / present as f64, missing_classes: present < cm.n_classes() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank2() -> PrototypeBank {
        build_prototypes(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), &[0, 1], 2, &[]).unwrap()
    }

    #[test]
    fn singleton_prototypes() {
        let b = bank2();
        assert_eq!(b.weights.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b.class_names, vec!["0", "1"]);
    }

    #[test]
    fn normalized_mean() {
        let b =
            build_prototypes(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap(), &[0, 0, 1], 2, &[])
                .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.weights[(0, 0)] - h).abs() < 1e-15 && (b.weights[(0, 1)] - h).abs() < 1e-15);
    }

    #[test]
    fn duplication_invariant() {
        let z = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let a = build_prototypes(&z, &[0, 0, 1], 2, &[]).unwrap();
        let zz = z.select_rows(&[0, 1, 2, 0, 1, 2]);
        let b = build_prototypes(&zz, &[0, 0, 1, 0, 0, 1], 2, &[]).unwrap();
        assert!(a.weights.max_abs_diff(&b.weights) < 1e-15);
    }

    #[test]
    fn prototype_errors() {
        let z = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(build_prototypes(&z, &[0], 2, &[]), Err(ScdaError::MissingClass(1))));
        let z = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(build_prototypes(&z, &[0, 0, 1], 2, &[]), Err(ScdaError::ZeroVector)));
    }

    #[test]
    fn predict_examples() {
        let b = bank2();
        assert_eq!(predict(&b, &[0.6, 0.8]).unwrap(), 1);
        assert_eq!(predict(&b, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(predict(&b, &[0.0, 1.0]).unwrap(), 1);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(predict(&b, &[h, h]).unwrap(), 0);
        assert!(matches!(predict(&b, &[1.0, 0.0, 0.0]), Err(ScdaError::DimensionMismatch { .. })));
    }

    #[test]
    fn evaluate_counts() {
        let b = bank2();
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let cm = evaluate(&b, &z, &[0, 1]).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![0, 1]]);

        let b3 =
            build_prototypes(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]).unwrap(), &[0, 1, 2], 3, &[])
                .unwrap();
        let cm = evaluate(&b3, &Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &[2]).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 0, 0], vec![0, 0, 0], vec![1, 0, 0]]);
        assert!(evaluate(&b, &Matrix::zeros(0, 2), &[]).is_err());
    }

    #[test]
    fn bacc_examples() {
        let perfect = ConfusionMatrix { counts: vec![vec![4, 0], vec![0, 9]] };
        assert_eq!(balanced_accuracy(&perfect).unwrap().value, 1.0);
        let cm = ConfusionMatrix { counts: vec![vec![8, 2], vec![5, 5]] };
        assert!((balanced_accuracy(&cm).unwrap().value - 0.65).abs() < 1e-15);
        let missing = ConfusionMatrix { counts: vec![vec![3, 1, 0], vec![0, 0, 0], vec![0, 1, 1]] };
        let b = balanced_accuracy(&missing).unwrap();
        assert!((b.value - (0.75 + 0.5) / 2.0).abs() < 1e-15);
        assert!(b.missing_classes);
        assert!(matches!(balanced_accuracy(&ConfusionMatrix::new(3)), Err(ScdaError::EmptyMatrix)));
    }
}
