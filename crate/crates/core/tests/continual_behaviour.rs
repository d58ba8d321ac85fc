use rand::Rng;
use sketchogd::continual::{
    pca_ogd_compress, project_update, train_continual, train_continual_observed, GramSchmidtStore, LearnerConfig,
    LearnerKind, Reservoir, Task, TaskSequence, TrainEvent,
};
use sketchogd::linalg::{gaussian_matrix, orth, svd, DenseMatrix, DEFAULT_RANK_TOL};
use sketchogd::metric_bounds::{optimal_rank_error, reconstruction_error};
use sketchogd::model::{LabeledExample, MlpModel};
use sketchogd::rng::rng_from_seed;

/// Two Gaussian blobs per task; task `t` shifts the blob centres.
fn toy_tasks(num_tasks: usize, seed: u64) -> TaskSequence {
    let mut rng = rng_from_seed(seed);
    let tasks = (0..num_tasks)
        .map(|t| {
            let mut make = |n: usize| -> Vec<LabeledExample> {
                (0..n)
                    .map(|i| {
                        let y = i % 2;
                        let angle = t as f64 * 0.7 + y as f64 * std::f64::consts::PI;
                        let x = vec![
                            angle.cos() + 0.3 * rng.random_range(-1.0..1.0),
                            angle.sin() + 0.3 * rng.random_range(-1.0..1.0),
                            0.3 * rng.random_range(-1.0..1.0),
                        ];
                        LabeledExample::new(x, y)
                    })
                    .collect()
            };
            Task { train: make(40), test: make(20) }
        })
        .collect();
    TaskSequence::new(tasks).unwrap()
}

fn config(kind: LearnerKind) -> LearnerConfig {
    LearnerConfig { memory_budget: 24, s: 20, epochs: 2, learning_rate: 0.05, batch_size: 8, seed: 5, ..LearnerConfig::new(kind) }
}

#[test]
fn first_task_identical_for_every_kind() {
    let tasks = toy_tasks(1, 3);
    let base = MlpModel::init(&[3, 8, 2], 1).unwrap();
    let mut reference = None;
    for kind in LearnerKind::ALL {
        let mut model = base.clone();
        let run = train_continual(&mut model, &tasks, &config(kind)).unwrap();
        let snapshot = (model.weights().to_vec(), run.accuracy_matrix());
        match &reference {
            None => reference = Some(snapshot),
            Some(r) => assert_eq!(r, &snapshot, "{kind} diverged on task 1"),
        }
    }
}

#[test]
fn random_ogd_with_zero_budget_equals_sgd() {
    let tasks = toy_tasks(3, 4);
    let base = MlpModel::init(&[3, 8, 2], 2).unwrap();
    let mut a = base.clone();
    let mut b = base;
    train_continual(&mut a, &tasks, &config(LearnerKind::Sgd)).unwrap();
    train_continual(&mut b, &tasks, &LearnerConfig { memory_budget: 0, ..config(LearnerKind::RandomOgd) }).unwrap();
    assert_eq!(a.weights(), b.weights());
}

#[test]
fn ogd_steps_are_orthogonal_to_stored_gradients() {
    let tasks = toy_tasks(2, 6);
    let mut model = MlpModel::init(&[3, 8, 2], 3).unwrap();
    let cfg = LearnerConfig { learning_rate: 1e-3, log_projection: true, ..config(LearnerKind::OgdFull) };
    let mut task1_grads: Vec<Vec<f64>> = Vec::new();
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    let run = train_continual_observed(&mut model, &tasks, &cfg, |ev| match ev {
        TrainEvent::TaskEnd { task: 0, model, sampled } => {
            task1_grads =
                sampled.iter().map(|&i| model.correct_logit_gradient(&tasks.tasks()[0].train[i]).unwrap()).collect();
        }
        TrainEvent::Step { task: 1, delta_norm, applied, .. } => {
            steps += 1;
            for g in &task1_grads {
                let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let c: f64 = g.iter().zip(applied.iter()).map(|(a, b)| a * b).sum();
                worst = worst.max(c.abs() / (g_norm * delta_norm));
            }
        }
        _ => {}
    })
    .unwrap();
    assert!(steps > 0 && !task1_grads.is_empty());
    assert!(worst <= 1e-8, "{worst}");
    assert!(run.diagnostics.max_projection_ratio <= 1e-10);
}

#[test]
fn projection_oracle() {
    let b = orth(&gaussian_matrix(40, 6, 1).unwrap(), DEFAULT_RANK_TOL).unwrap();
    let mut rng = rng_from_seed(2);
    let delta: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = project_update(&delta, &b).unwrap();
    let coeffs = b.t_matvec(&out).unwrap();
    assert!(coeffs.iter().all(|c| c.abs() < 1e-10));
    let inside = b.matvec(&[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
    let zero = project_update(&inside, &b).unwrap();
    let n: f64 = inside.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(zero.iter().all(|v| v.abs() <= 1e-10 * n));
}

#[test]
fn gram_schmidt_span_matches_svd_range() {
    let g = gaussian_matrix(500, 200, 8).unwrap();
    let mut store = GramSchmidtStore::new(None);
    for c in g.columns() {
        store.absorb(&c);
    }
    assert_eq!(store.width(), 200);
    let b = DenseMatrix::from_columns(500, store.basis()).unwrap();
    assert!(b.orthonormality_defect() < 1e-12);
    let u = svd(&g).unwrap().u.column_range(0..200);
    assert!(reconstruction_error(&u, &b).unwrap() < 1e-6);
    assert!(reconstruction_error(&b, &u).unwrap() < 1e-6);

    let mut ortho = GramSchmidtStore::new(None);
    for i in 0..7 {
        let mut e = vec![0.0; 10];
        e[i] = 2.0;
        ortho.absorb(&e);
    }
    assert_eq!(ortho.width(), 7);
}

#[test]
fn pca_matches_truncated_svd() {
    let g = gaussian_matrix(500, 40, 9).unwrap();
    let b = pca_ogd_compress(&g, 10).unwrap();
    assert_eq!(b.cols(), 10);
    let e = reconstruction_error(&g, &b).unwrap();
    let best = optimal_rank_error(&g, 10).unwrap();
    assert!((e - best).abs() <= 1e-8 * g.frobenius_norm_sq(), "{e} vs {best}");
}

#[test]
fn reservoir_is_uniform() {
    const N: usize = 50;
    const BUDGET: usize = 10;
    const REPLAYS: usize = 2000;
    let mut counts = [0usize; N];
    for r in 0..REPLAYS {
        let mut res = Reservoir::new(BUDGET);
        let mut rng = rng_from_seed(10_000 + r as u64);
        for i in 0..N {
            res.offer(&[i as f64], &mut rng);
        }
        for &i in res.retained_indices() {
            counts[i as usize] += 1;
        }
    }
    let expected = (REPLAYS * BUDGET) as f64 / N as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.99 quantile of χ² with 49 degrees of freedom.
    assert!(chi2 < 74.919, "χ² = {chi2}");
}

#[test]
fn memory_never_exceeds_budget() {
    let tasks = toy_tasks(4, 11);
    for kind in [LearnerKind::RandomOgd, LearnerKind::PcaOgd, LearnerKind::Sketch1, LearnerKind::Sketch2, LearnerKind::Sketch3] {
        let mut model = MlpModel::init(&[3, 8, 2], 4).unwrap();
        let run = train_continual(&mut model, &tasks, &config(kind)).unwrap();
        assert!(run.diagnostics.peak_stored_vectors <= 24, "{kind}: {}", run.diagnostics.peak_stored_vectors);
        assert!(run.checkpoints.iter().flat_map(|c| &c.accuracies).all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn infeasible_sketch_budget_is_rejected() {
    let tasks = toy_tasks(1, 1);
    let mut model = MlpModel::init(&[3, 8, 2], 4).unwrap();
    let cfg = LearnerConfig { memory_budget: 3, ..config(LearnerKind::Sketch2) };
    assert!(train_continual(&mut model, &tasks, &cfg).is_err());
}
