//! Batches that satisfy the cross-domain constraint: for every class and every
//! center in the pool, each batch holds at least one sample of that class
//! from that center.
//!
//! Batches are composed cell by cell. Each (class, center) cell contributes
//! exactly its quota, so the constraint holds by construction and every
//! anchor has an in-batch positive from each other center.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdaError};
use crate::rng;

pub type Cell = (usize, usize);

/// Class and center of every sample in a training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPool {
    pub labels: Vec<usize>,
    pub centers: Vec<usize>,
    pub n_classes: usize,
    pub n_centers: usize,
}

impl TrainingPool {
    pub fn new(labels: Vec<usize>, centers: Vec<usize>, n_classes: usize, n_centers: usize) -> Result<Self> {
        if labels.len() != centers.len() {
            return Err(ScdaError::ShapeMismatch(format!("{} labels but {} centers", labels.len(), centers.len())));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= n_classes) {
            return Err(ScdaError::MissingClass(c));
        }
        if let Some(&h) = centers.iter().find(|&&h| h >= n_centers) {
            return Err(ScdaError::InvalidManifest(format!("center index {h} out of range")));
        }
        Ok(TrainingPool { labels, centers, n_classes, n_centers })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Every (class, center) cell of the registries, including empty ones.
    pub fn cells(&self) -> BTreeMap<Cell, Vec<usize>> {
        let mut cells: BTreeMap<Cell, Vec<usize>> =
            (0..self.n_classes).flat_map(|c| (0..self.n_centers).map(move |h| ((c, h), Vec::new()))).collect();
        for (i, (&c, &h)) in self.labels.iter().zip(&self.centers).enumerate() {
            cells.get_mut(&(c, h)).expect("indices checked").push(i);
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotaOverride {
    pub class: usize,
    pub center: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSpec {
    /// Samples per (class, center) cell per batch unless overridden.
    pub quota_per_cell: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<QuotaOverride>,
    pub steps_per_epoch: usize,
    pub allow_replacement: bool,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec { quota_per_cell: 1, overrides: Vec::new(), steps_per_epoch: 100, allow_replacement: true }
    }
}

impl BatchSpec {
    pub fn quota(&self, cell: Cell) -> usize {
        self.overrides.iter().rev().find(|o| (o.class, o.center) == cell).map_or(self.quota_per_cell, |o| o.quota)
    }

    pub fn batch_size(&self, n_classes: usize, n_centers: usize) -> usize {
        (0..n_classes).flat_map(|c| (0..n_centers).map(move |h| (c, h))).map(|cell| self.quota(cell)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.quota_per_cell == 0 || self.overrides.iter().any(|o| o.quota == 0) {
            return Err(ScdaError::InfeasibleSpec("every cell quota must be at least 1".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(ScdaError::InfeasibleSpec("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: Cell,
    pub available: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub cells: Vec<CellReport>,
    pub feasible_without_replacement: bool,
    pub feasible_with_replacement: bool,
}

impl FeasibilityReport {
    pub fn feasible(&self, allow_replacement: bool) -> bool {
        if allow_replacement {
            self.feasible_with_replacement
        } else {
            self.feasible_without_replacement
        }
    }
}

pub fn check_feasibility(pool: &TrainingPool, spec: &BatchSpec) -> Result<FeasibilityReport> {
    if pool.is_empty() {
        return Err(ScdaError::EmptyInput("training pool".into()));
    }
    spec.validate()?;
    let mut cells = Vec::new();
    for (cell, members) in pool.cells() {
        if members.is_empty() {
            return Err(ScdaError::EmptyCell { class: cell.0.to_string(), center: cell.1.to_string() });
        }
        cells.push(CellReport { cell, available: members.len(), quota: spec.quota(cell) });
    }
    let feasible_without_replacement = cells.iter().all(|c| c.available >= c.quota);
    Ok(FeasibilityReport { cells, feasible_without_replacement, feasible_with_replacement: true })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub seed: u64,
}

pub fn make_batches(pool: &TrainingPool, spec: &BatchSpec, seed: u64) -> Result<BatchPlan> {
    let report = check_feasibility(pool, spec)?;
    if !report.feasible(spec.allow_replacement) {
        let short: Vec<String> = report
            .cells
            .iter()
            .filter(|c| c.available < c.quota)
            .map(|c| format!("cell {:?} has {} < quota {}", c.cell, c.available, c.quota))
            .collect();
        return Err(ScdaError::InfeasibleSpec(short.join("; ")));
    }
    let cells = pool.cells();
    let mut r = rng::seeded(seed);
    let mut batches = Vec::with_capacity(spec.steps_per_epoch);
    for _ in 0..spec.steps_per_epoch {
        let mut batch = Vec::with_capacity(spec.batch_size(pool.n_classes, pool.n_centers));
        for (&cell, members) in &cells {
            let q = spec.quota(cell);
            if members.len() >= q {
                batch.extend(members.choose_multiple(&mut r, q).copied());
            } else {
                // every member once, the remainder uniformly with replacement
                let mut all = members.clone();
                all.shuffle(&mut r);
                batch.extend(all);
                for _ in members.len()..q {
                    batch.push(members[r.random_range(0..members.len())]);
                }
            }
        }
        batches.push(batch);
    }
    Ok(BatchPlan { batches, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(counts: &[[usize; 2]]) -> TrainingPool {
        let mut labels = Vec::new();
        let mut centers = Vec::new();
        for (c, row) in counts.iter().enumerate() {
            for (h, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    labels.push(c);
                    centers.push(h);
                }
            }
        }
        TrainingPool::new(labels, centers, counts.len(), 2).unwrap()
    }

    #[test]
    fn six_by_two_feasible() {
        let p = pool(&[[3, 4], [1, 2], [5, 1], [2, 2], [1, 1], [4, 6]]);
        let rep = check_feasibility(&p, &BatchSpec::default()).unwrap();
        assert!(rep.feasible_with_replacement);
        assert!(rep.feasible_without_replacement);
        assert_eq!(rep.cells.len(), 12);
    }

    #[test]
    fn empty_cell_rejected() {
        let p = pool(&[[3, 0], [1, 2]]);
        assert!(matches!(check_feasibility(&p, &BatchSpec::default()), Err(ScdaError::EmptyCell { .. })));
    }

    #[test]
    fn pigeonhole() {
        let p = pool(&[[2, 5], [5, 5]]);
        let spec = BatchSpec { quota_per_cell: 4, allow_replacement: false, ..BatchSpec::default() };
        let rep = check_feasibility(&p, &spec).unwrap();
        assert!(!rep.feasible_without_replacement);
        assert!(matches!(make_batches(&p, &spec, 0), Err(ScdaError::InfeasibleSpec(_))));
        let with = BatchSpec { allow_replacement: true, ..spec };
        let plan = make_batches(&p, &with, 0).unwrap();
        assert!(plan.batches.iter().all(|b| b.len() == 16));
    }

    #[test]
    fn overrides_change_batch_size() {
        let spec =
            BatchSpec { overrides: vec![QuotaOverride { class: 1, center: 0, quota: 3 }], ..BatchSpec::default() };
        assert_eq!(spec.quota((1, 0)), 3);
        assert_eq!(spec.quota((0, 0)), 1);
        assert_eq!(spec.batch_size(2, 2), 6);
    }

    #[test]
    fn no_repeats_when_cell_large_enough() {
        let p = pool(&[[5, 5], [5, 5]]);
        let spec =
            BatchSpec { quota_per_cell: 3, allow_replacement: false, steps_per_epoch: 50, ..BatchSpec::default() };
        for b in make_batches(&p, &spec, 9).unwrap().batches {
            let mut s = b.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), b.len());
        }
    }
}
