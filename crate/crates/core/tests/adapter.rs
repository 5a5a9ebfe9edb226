mod common;

use common::*;
use rand::Rng;
use scda::adapter::{AdapterHead, HeadShape};
use scda::embedding::normalize_rows;
use scda::loss::supcon_objective;
use scda::rng::{derive_seed, tag};
use scda::sampler::{BatchSpec, TrainingPool};
use scda::{backward, forward, init_head, supcon_loss, train, transform, LossBatch, Matrix, TrainConfig};

fn composite_loss(head: &AdapterHead, z: &Matrix, labels: &[usize], tau: f64) -> f64 {
    let c = forward(head, z).unwrap();
    supcon_objective(&LossBatch { reps: &c, labels, temperature: tau }).unwrap().loss
}

#[test]
fn end_to_end_parameter_gradients() {
    let mut r = rng(21);
    for case in 0..50 {
        let b = r.random_range(2..=6);
        let d = r.random_range(2..=5);
        let shape = if case % 2 == 0 { HeadShape::Linear } else { HeadShape::Mlp { hidden: r.random_range(2..=6) } };
        let mut head = init_head(d, shape, case).unwrap();
        // nonzero biases so their gradients are exercised
        let mut p = head.params();
        p.iter_mut().for_each(|v| *v += 0.1 * gaussian(&mut r));
        head.set_params(&p);
        let z = random_matrix(&mut r, b, d);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..2)).collect();
        let tau = [0.1, 0.5, 1.0][case as usize % 3];

        let c = forward(&head, &z).unwrap();
        let res = supcon_loss(&LossBatch { reps: &c, labels: &labels, temperature: tau }).unwrap();
        let analytic = backward(&head, &z, &res.grad).unwrap().flat();
        let mut probe = head.clone();
        let fd = fd_gradient(&p, 1e-5, |x| {
            probe.set_params(x);
            composite_loss(&probe, &z, &labels, tau)
        });
        let err = relative_error(&analytic, &fd);
        assert!(err < 1e-4, "case {case} ({shape:?}): relative error {err}");
    }
}

#[test]
fn duplicated_rows_double_gradients() {
    let mut r = rng(22);
    let head = init_head(4, HeadShape::Mlp { hidden: 5 }, 3).unwrap();
    let z = random_matrix(&mut r, 1, 4);
    let g = random_matrix(&mut r, 1, 4);
    let single = backward(&head, &z, &g).unwrap().flat();
    let zz = z.select_rows(&[0, 0]);
    let gg = g.select_rows(&[0, 0]);
    let double = backward(&head, &zz, &gg).unwrap().flat();
    for (s, d) in single.iter().zip(&double) {
        assert_eq!(2.0 * s, *d);
    }

    let z = random_matrix(&mut r, 3, 4);
    let g = random_matrix(&mut r, 3, 4);
    let once = backward(&head, &z, &g).unwrap().flat();
    let twice =
        backward(&head, &z.select_rows(&[0, 1, 2, 0, 1, 2]), &g.select_rows(&[0, 1, 2, 0, 1, 2])).unwrap().flat();
    assert!(relative_error(&twice, &once.iter().map(|v| 2.0 * v).collect::<Vec<_>>()) < 1e-14);
}

/// Two classes, two centers, d = 4; center 1 is a rotated, shifted copy.
fn toy_pool(seed: u64) -> (Matrix, TrainingPool) {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let (mut labels, mut centers) = (Vec::new(), Vec::new());
    for center in 0..2 {
        for class in 0..2 {
            for _ in 0..8 {
                let mut v = vec![0.0; 4];
                v[class] = 1.0;
                if center == 1 {
                    v = vec![v[1], -v[0], v[2] + 0.5, v[3] + 0.5];
                }
                v.iter_mut().for_each(|x| *x += 0.1 * gaussian(&mut r));
                rows.push(v);
                labels.push(class);
                centers.push(center);
            }
        }
    }
    let pool = TrainingPool::new(labels, centers, 2, 2).unwrap();
    (Matrix::from_rows(&rows).unwrap(), pool)
}

#[test]
fn training_decreases_loss_on_toy_set() {
    for seed in 0..5 {
        let (z, pool) = toy_pool(seed);
        let cfg = TrainConfig { steps: 200, learning_rate: 1e-3, seed, ..TrainConfig::default() };
        let rep = train(&z, &pool, &cfg).unwrap();
        let head: f64 = rep.scaled_loss_trace[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = rep.scaled_loss_trace[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < head, "seed {seed}: {tail} >= {head}");
        assert_eq!(rep.loss_trace.len(), 200);
        assert_eq!(rep.anchors_used_trace.len(), 200);
    }
}

#[test]
fn training_is_deterministic() {
    let (z, pool) = toy_pool(7);
    let cfg = TrainConfig { steps: 50, seed: 9, ..TrainConfig::default() };
    assert_eq!(train(&z, &pool, &cfg).unwrap(), train(&z, &pool, &cfg).unwrap());
    let other = TrainConfig { seed: 10, ..cfg.clone() };
    assert_ne!(train(&z, &pool, &cfg).unwrap().final_head, train(&z, &pool, &other).unwrap().final_head);
}

#[test]
fn zero_steps_returns_initial_head() {
    let (z, pool) = toy_pool(1);
    let cfg = TrainConfig { steps: 0, seed: 4, ..TrainConfig::default() };
    let rep = train(&z, &pool, &cfg).unwrap();
    assert!(rep.loss_trace.is_empty());
    let init = init_head(4, cfg.head, derive_seed(4, &[tag("init")])).unwrap();
    assert_eq!(rep.final_head, init);
}

#[test]
fn infeasible_pool_is_rejected_before_training() {
    let (z, _) = toy_pool(1);
    // center 1 has no class-1 slides
    let labels: Vec<usize> = (0..32).map(|i| if i >= 16 { 0 } else { i / 8 }).collect();
    let centers: Vec<usize> = (0..32).map(|i| i / 16).collect();
    let pool = TrainingPool::new(labels, centers, 2, 2).unwrap();
    assert!(train(&z, &pool, &TrainConfig::default()).is_err());
    let strict = TrainConfig {
        batch: BatchSpec { quota_per_cell: 20, allow_replacement: false, ..BatchSpec::default() },
        ..TrainConfig::default()
    };
    let (z, pool) = toy_pool(1);
    assert!(matches!(train(&z, &pool, &strict), Err(scda::ScdaError::InfeasibleSpec(_))));
}

#[test]
fn outputs_are_unit_norm_for_every_shape() {
    let mut r = rng(23);
    let z = random_matrix(&mut r, 10, 6);
    for shape in [HeadShape::Linear, HeadShape::Mlp { hidden: 9 }] {
        let c = forward(&init_head(6, shape, 2).unwrap(), &z).unwrap();
        for row in c.row_iter() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_eq!(c, forward(&init_head(6, shape, 2).unwrap(), &z).unwrap());
    }
}

#[test]
fn identity_transform_normalizes_and_is_row_wise() {
    let mut r = rng(24);
    let z = random_matrix(&mut r, 8, 3);
    let id = AdapterHead::identity(3);
    let c = transform(&id, &z).unwrap();
    assert!(c.max_abs_diff(&normalize_rows(&z).unwrap()) < 1e-15);
    let order = [5, 2, 7, 0, 1, 6, 3, 4];
    assert_eq!(transform(&id, &z.select_rows(&order)).unwrap(), c.select_rows(&order));
}

#[test]
fn head_file_round_trip() {
    let (z, pool) = toy_pool(2);
    let head = train(&z, &pool, &TrainConfig { steps: 30, ..TrainConfig::default() }).unwrap().final_head;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("head.scdh");
    head.save(&path).unwrap();
    let back = AdapterHead::load(&path).unwrap();
    // weights are stored as f32
    assert!(relative_error(&back.params(), &head.params()) < 1e-7);
    // and a head already at f32 precision survives exactly
    back.save(&path).unwrap();
    assert_eq!(AdapterHead::load(&path).unwrap(), back);
}
