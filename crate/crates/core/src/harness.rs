//! Experiment harnesses: the cross-center evaluation grid and few-shot
//! adaptation curves, with CSV report emission.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::adapter::{train, transform, AdapterHead, TrainConfig};
use crate::embedding::{normalize_rows, DatasetManifest, Split};
use crate::error::{Result, ScdaError};
use crate::format::write_bytes;
use crate::linalg::Matrix;
use crate::prototype::{balanced_accuracy, build_prototypes, evaluate, ConfusionMatrix};
use crate::rng::{self, derive_seed, tag};
use crate::sampler::TrainingPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Pooled embeddings straight into prototypes.
    Raw,
    /// Contrastively adapted embeddings into prototypes.
    Scda,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Scda => "scda",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = ScdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Method::Raw),
            "scda" => Ok(Method::Scda),
            other => Err(ScdaError::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// One evaluated cell of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub train_centers: String,
    pub test_centers: String,
    /// `"all"` for full training sets, otherwise the shot count.
    pub k: String,
    pub seed: u64,
    pub bacc: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub train_centers: String,
    pub test_centers: String,
    pub k: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf)
}

/// Fixed-precision float formatting keeps CSVs byte-stable across platforms.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

impl Report {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            w.write_record(["method", "train_centers", "test_centers", "k", "seed", "bacc"])?;
            for r in &self.rows {
                w.write_record([
                    r.method.as_str(),
                    &r.train_centers,
                    &r.test_centers,
                    &r.k,
                    &r.seed.to_string(),
                    &fmt_f(r.bacc),
                ])?;
            }
            w.flush().map_err(|e| ScdaError::io("<csv>", e))?;
        }
        Ok(buf)
    }

    /// Mean and sample std of BACC grouped by (method, train, test, k), in
    /// first-seen order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut order: Vec<(String, String, String, String)> = Vec::new();
        let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.train_centers.clone(), r.test_centers.clone(), r.k.clone());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r.bacc);
        }
        order
            .into_iter()
            .map(|key| {
                let v = &groups[&key];
                let (mean, std) = mean_std(v);
                AggregateRow {
                    method: key.0,
                    train_centers: key.1,
                    test_centers: key.2,
                    k: key.3,
                    n: v.len(),
                    mean,
                    std,
                }
            })
            .collect()
    }

    pub fn aggregate_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            w.write_record(["method", "train_centers", "test_centers", "k", "n", "mean_bacc", "std_bacc"])?;
            for a in self.aggregate() {
                w.write_record([
                    a.method.as_str(),
                    &a.train_centers,
                    &a.test_centers,
                    &a.k,
                    &a.n.to_string(),
                    &fmt_f(a.mean),
                    &fmt_f(a.std),
                ])?;
            }
            w.flush().map_err(|e| ScdaError::io("<csv>", e))?;
        }
        Ok(buf)
    }

    /// Writes `report.csv`, `report_aggregate.csv`, and one confusion CSV per row.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join("report.csv"), &self.to_csv()?)?;
        write_bytes(&dir.join("report_aggregate.csv"), &self.aggregate_csv()?)?;
        for r in &self.rows {
            let name = format!(
                "confusion_{}_train-{}_test-{}_k-{}_seed-{}.csv",
                r.method,
                r.train_centers.replace('+', "_"),
                r.test_centers.replace('+', "_"),
                r.k,
                r.seed
            );
            r.confusion.write_csv(&dir.join(name), &self.class_names)?;
        }
        Ok(())
    }

    /// Mean BACC over seeds of one (method, train, test, k) cell.
    pub fn mean(&self, method: &str, train_centers: &str, test_centers: &str, k: &str) -> Option<f64> {
        self.aggregate()
            .into_iter()
            .find(|a| {
                a.method == method && a.train_centers == train_centers && a.test_centers == test_centers && a.k == k
            })
            .map(|a| a.mean)
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

fn center_label(m: &DatasetManifest, centers: &[usize]) -> String {
    centers.iter().map(|&h| m.centers[h].as_str()).collect::<Vec<_>>().join("+")
}

/// Worker count: `SCDA_THREADS` when set (0 = serial), else the machine's
/// available parallelism.
pub fn thread_cap() -> usize {
    match std::env::var("SCDA_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) => n.max(1),
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// Runs independent jobs on at most `threads` workers; results keep job order.
fn run_jobs<T: Send, F: Fn(usize) -> Result<T> + Sync>(n: usize, threads: usize, job: F) -> Result<Vec<T>> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(job).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<T>>>> = (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = job(i);
                *slots[i].lock().expect("poisoned") = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("poisoned").expect("job ran")).collect()
}

/// Everything an evaluation needs from one dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetView<'a> {
    pub manifest: &'a DatasetManifest,
    /// Raw pooled embeddings, one row per manifest slide.
    pub embeddings: &'a Matrix,
}

impl<'a> DatasetView<'a> {
    pub fn new(manifest: &'a DatasetManifest, embeddings: &'a Matrix) -> Result<Self> {
        manifest.validate()?;
        if manifest.splits.is_none() {
            return Err(ScdaError::InvalidManifest("dataset has no split assignments".into()));
        }
        if embeddings.rows() != manifest.slides.len() {
            return Err(ScdaError::DimensionMismatch { expected: manifest.slides.len(), found: embeddings.rows() });
        }
        Ok(DatasetView { manifest, embeddings })
    }

    fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.manifest.label(i)).collect()
    }

    /// Pool restricted to the centers actually present (the constraint only
    /// ranges over centers in the training pool).
    fn compact_pool(&self, idx: &[usize]) -> Result<TrainingPool> {
        let mut present: Vec<usize> = idx.iter().map(|&i| self.manifest.center(i)).collect();
        present.sort_unstable();
        present.dedup();
        let centers = idx.iter().map(|&i| present.binary_search(&self.manifest.center(i)).expect("present")).collect();
        TrainingPool::new(self.labels_of(idx), centers, self.manifest.classes.len(), present.len())
    }
}

/// A fitted classifier: optional head plus prototypes, applied to any rows.
struct Fitted {
    head: Option<crate::adapter::AdapterHead>,
    bank: crate::prototype::PrototypeBank,
}

impl Fitted {
    fn represent(&self, z: &Matrix) -> Result<Matrix> {
        match &self.head {
            Some(h) => transform(h, z),
            None => normalize_rows(z),
        }
    }

    fn confusion(&self, view: &DatasetView<'_>, idx: &[usize]) -> Result<ConfusionMatrix> {
        let c = self.represent(&view.embeddings.select_rows(idx))?;
        evaluate(&self.bank, &c, &view.labels_of(idx))
    }
}

/// `train_idx` trains the head (SCDA) and `proto_idx` builds prototypes.
fn fit(
    view: &DatasetView<'_>,
    method: Method,
    train_idx: &[usize],
    proto_idx: &[usize],
    config: &TrainConfig,
) -> Result<Fitted> {
    let head = match method {
        Method::Raw => None,
        Method::Scda => {
            let pool = view.compact_pool(train_idx)?;
            let report = train(&view.embeddings.select_rows(train_idx), &pool, config)?;
            Some(report.final_head)
        }
    };
    let mut fitted = Fitted {
        head,
        bank: crate::prototype::PrototypeBank { weights: Matrix::zeros(0, 0), class_names: Vec::new() },
    };
    let c = fitted.represent(&view.embeddings.select_rows(proto_idx))?;
    fitted.bank =
        build_prototypes(&c, &view.labels_of(proto_idx), view.manifest.classes.len(), &view.manifest.classes)?;
    Ok(fitted)
}

/// Every single center plus the union of all of them (when there is more
/// than one).
fn center_groups(n_centers: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = (0..n_centers).map(|h| vec![h]).collect();
    if n_centers > 1 {
        groups.push((0..n_centers).collect());
    }
    groups
}

fn eval_rows(
    view: &DatasetView<'_>,
    fitted: &Fitted,
    method: &str,
    train_label: &str,
    k: &str,
    seed: u64,
    test_groups: &[Vec<usize>],
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for group in test_groups {
        let idx = view.manifest.select(Split::Test, group);
        if idx.is_empty() {
            continue;
        }
        let cm = fitted.confusion(view, &idx)?;
        rows.push(ReportRow {
            method: method.to_string(),
            train_centers: train_label.to_string(),
            test_centers: center_label(view.manifest, group),
            k: k.to_string(),
            seed,
            bacc: balanced_accuracy(&cm)?.value,
            confusion: cm,
        });
    }
    Ok(rows)
}

/// Cross-center grid: for each training group (each center, then all
/// centers) and each method, BACC on each test group. The balanced accuracy
/// of a merged test group is computed on its merged confusion matrix.
pub fn run_crosscenter_grid(
    view: &DatasetView<'_>,
    config: &TrainConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<Report> {
    let groups = center_groups(view.manifest.centers.len());
    let mut jobs = Vec::new();
    for &seed in seeds {
        for group in &groups {
            for &method in methods {
                jobs.push((seed, group.clone(), method));
            }
        }
    }
    let chunks = run_jobs(jobs.len(), thread_cap(), |j| {
        let (seed, group, method) = &jobs[j];
        let train_idx = view.manifest.select(Split::Train, group);
        let cfg = TrainConfig {
            seed: derive_seed(*seed, &[tag("grid"), tag(&center_label(view.manifest, group))]),
            ..config.clone()
        };
        let fitted = fit(view, *method, &train_idx, &train_idx, &cfg)?;
        eval_rows(view, &fitted, method.name(), &center_label(view.manifest, group), "all", *seed, &groups)
    })?;
    Ok(Report { rows: chunks.into_iter().flatten().collect(), class_names: view.manifest.classes.clone() })
}

/// Prototypes from every training slide (through `head` when given), scored
/// on each center's test split and on the merged test split.
pub fn evaluate_split(view: &DatasetView<'_>, head: Option<&AdapterHead>, seed: u64) -> Result<Report> {
    let groups = center_groups(view.manifest.centers.len());
    let all: Vec<usize> = (0..view.manifest.centers.len()).collect();
    let train_idx = view.manifest.select(Split::Train, &all);
    let mut fitted = Fitted {
        head: head.cloned(),
        bank: crate::prototype::PrototypeBank { weights: Matrix::zeros(0, 0), class_names: Vec::new() },
    };
    let c = fitted.represent(&view.embeddings.select_rows(&train_idx))?;
    fitted.bank =
        build_prototypes(&c, &view.labels_of(&train_idx), view.manifest.classes.len(), &view.manifest.classes)?;
    let method = if head.is_some() { Method::Scda } else { Method::Raw };
    let rows = eval_rows(view, &fitted, method.name(), &center_label(view.manifest, &all), "all", seed, &groups)?;
    Ok(Report { rows, class_names: view.manifest.classes.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    pub base_center: String,
    /// Center the shots are drawn from; defaults to the first other center.
    pub held_out_center: Option<String>,
    pub k_values: Vec<usize>,
    pub n_seeds: usize,
    pub include_zero_shot: bool,
    pub include_all: bool,
    /// Build prototypes from the k-shots as well as the base center.
    pub prototypes_include_shots: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            base_center: "A".into(),
            held_out_center: None,
            k_values: vec![2, 4, 6, 8, 10],
            n_seeds: 5,
            include_zero_shot: true,
            include_all: true,
            prototypes_include_shots: true,
        }
    }
}

/// Per-class shot selection from the held-out center's training split.
pub fn select_shots(manifest: &DatasetManifest, held_out: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let pool = manifest.select(Split::Train, &[held_out]);
    let mut shots = Vec::with_capacity(k * manifest.classes.len());
    for cls in 0..manifest.classes.len() {
        let members: Vec<usize> = pool.iter().copied().filter(|&i| manifest.label(i) == cls).collect();
        if members.len() < k {
            return Err(ScdaError::NotEnoughShots { class: cls, available: members.len(), needed: k });
        }
        let mut r = rng::seeded(derive_seed(seed, &[tag("shots"), k as u64, cls as u64]));
        let mut chosen: Vec<usize> = members.choose_multiple(&mut r, k).copied().collect();
        chosen.sort_unstable();
        shots.extend(chosen);
    }
    Ok(shots)
}

/// Few-shot curves: base center fully labeled, `k` labeled slides per class
/// from the held-out center.
pub fn run_fewshot(view: &DatasetView<'_>, fs: &FewShotConfig, config: &TrainConfig) -> Result<Report> {
    let m = view.manifest;
    let base = m
        .center_index(&fs.base_center)
        .ok_or_else(|| ScdaError::InvalidConfig(format!("unknown base center `{}`", fs.base_center)))?;
    let held = match &fs.held_out_center {
        Some(name) => {
            m.center_index(name).ok_or_else(|| ScdaError::InvalidConfig(format!("unknown held-out center `{name}`")))?
        }
        None => (0..m.centers.len())
            .find(|&h| h != base)
            .ok_or_else(|| ScdaError::InvalidConfig("few-shot needs at least two centers".into()))?,
    };
    if held == base {
        return Err(ScdaError::InvalidConfig("held-out center equals base center".into()));
    }
    if fs.k_values.contains(&0) || fs.n_seeds == 0 {
        return Err(ScdaError::InvalidConfig("k values and n_seeds must be positive".into()));
    }
    let max_k = fs.k_values.iter().copied().max().unwrap_or(0);
    // surface NotEnoughShots before any training
    select_shots(m, held, max_k, 0)?;

    let base_train = m.select(Split::Train, &[base]);
    let held_train = m.select(Split::Train, &[held]);
    let test_groups = vec![vec![base], vec![held]];
    let train_label = format!("{}+{}-shot", m.centers[base], m.centers[held]);

    #[derive(Clone)]
    enum Cell {
        Zero,
        Shots(usize),
        All(Method),
    }
    let mut cells = Vec::new();
    for seed in 0..fs.n_seeds as u64 {
        if fs.include_zero_shot {
            cells.push((seed, Cell::Zero));
        }
        for &k in &fs.k_values {
            cells.push((seed, Cell::Shots(k)));
        }
        if fs.include_all {
            cells.push((seed, Cell::All(Method::Scda)));
            cells.push((seed, Cell::All(Method::Raw)));
        }
    }

    let chunks = run_jobs(cells.len(), thread_cap(), |j| {
        let (seed, cell) = &cells[j];
        let seed = *seed;
        let run_seed = derive_seed(config.seed, &[tag("fewshot"), seed]);
        match cell {
            Cell::Zero => {
                let fitted = fit(view, Method::Raw, &base_train, &base_train, config)?;
                eval_rows(view, &fitted, "raw", &train_label, "0", seed, &test_groups)
            }
            Cell::Shots(k) => {
                let shots = select_shots(m, held, *k, run_seed)?;
                let mut train_idx = base_train.clone();
                train_idx.extend(&shots);
                let proto_idx = if fs.prototypes_include_shots { &train_idx } else { &base_train };
                let cfg = TrainConfig { seed: derive_seed(run_seed, &[tag("train"), *k as u64]), ..config.clone() };
                let fitted = fit(view, Method::Scda, &train_idx, proto_idx, &cfg)?;
                eval_rows(view, &fitted, "scda", &train_label, &k.to_string(), seed, &test_groups)
            }
            Cell::All(method) => {
                let mut train_idx = base_train.clone();
                train_idx.extend(&held_train);
                let cfg = TrainConfig { seed: derive_seed(run_seed, &[tag("train-all")]), ..config.clone() };
                let fitted = fit(view, *method, &train_idx, &train_idx, &cfg)?;
                eval_rows(view, &fitted, method.name(), &train_label, "all", seed, &test_groups)
            }
        }
    })?;
    Ok(Report { rows: chunks.into_iter().flatten().collect(), class_names: m.classes.clone() })
}
