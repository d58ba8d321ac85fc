//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use sketchogd::continual::{sketch_dims, train_continual_observed, LearnerConfig, LearnerKind, TrainEvent};
use sketchogd::linalg::{gaussian_matrix, DenseMatrix, DEFAULT_RANK_TOL};
use sketchogd::metric_bounds::{
    bound_method1, deterministic_draws, matrix_with_spectrum, paired_symmetric_draws, reconstruction_error,
    sketch_columns, verify_bound_montecarlo, Spectrum,
};
use sketchogd::model::{LabeledExample, MlpModel};
use sketchogd::rng::{derive_seed, rng_from_seed, tag};
use sketchogd::sketch::{sketch_full, SketchMethod, SketchState};
use sketchogd_bench::config::{KeyValues, RunConfig, RUN_KEYS};
use sketchogd_bench::runner::{execute_runs, export_spectrum, run_benchmark, run_bounds, RunRecord};
use sketchogd_bench::tasks::{build_tasks, load_base, BenchmarkSpec, Family, Source, SyntheticSpec};

const P: usize = 200;
const K: usize = 20;
const L: usize = 22;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn spectra() -> [Spectrum; 3] {
    [Spectrum::Flat { lambda: 1.0 }, Spectrum::Linear { lambda: 1.0 }, Spectrum::Step { high: 100.0, low: 2.0, count: 10 }]
}

fn spectrum_matrix(s: &Spectrum, seed: u64) -> DenseMatrix {
    matrix_with_spectrum(&s.eigenvalues(P), P, seed).expect("synthetic spectrum")
}

fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).expect("shape").frobenius_norm() / b.frobenius_norm()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let g = gaussian_matrix(P, 100, 9000 + t).expect("shape");
        let a = g.matmul_t(&g).expect("shape");
        for method in SketchMethod::ALL {
            let state = sketch_columns(&g, method, K, L, t).expect("sketch");
            match method {
                SketchMethod::Method1 => {
                    let rows = gaussian_matrix(100, K, SketchState::omega_stream_seed(t)).expect("shape");
                    worst = worst.max(rel(state.y(), &g.matmul(&rows).expect("shape")));
                }
                _ => {
                    let full = sketch_full(&a, K, L, t).expect("sketch");
                    worst = worst.max(rel(state.y(), &full.y));
                    if let Some(w) = state.w() {
                        worst = worst.max(rel(w, &full.w));
                    }
                }
            }
        }
    }
    outcome(worst <= 1e-10, format!("max relative Frobenius error {worst:.2e} over 50 streams x 3 methods"))
}

fn expectation_check(method: SketchMethod) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, s) in spectra().iter().enumerate() {
        let g = spectrum_matrix(s, 100 + i as u64);
        let r = verify_bound_montecarlo(&g, method, K, L, 300, 7 + i as u64).expect("monte carlo");
        ok &= r.within_bound();
        parts.push(format!(
            "{} {:.2}+3*{:.2}<={:.2}",
            s.name(),
            r.empirical_mean,
            r.empirical_stderr,
            r.bound_value
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let (ok, detail) = expectation_check(SketchMethod::Method1);
    let flat = bound_method1(&Spectrum::Flat { lambda: 1.0 }.eigenvalues(P), K).expect("bound");
    let flat_ok = flat == (P as f64, 0);
    outcome(ok && flat_ok, format!("{detail}; flat bound {} at gamma* {}", flat.0, flat.1))
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, s) in spectra().iter().enumerate() {
        let g = spectrum_matrix(s, 200 + i as u64);
        let slack = 1e-9 * g.frobenius_norm_sq();
        let draws = deterministic_draws(&g, K, 100, 30 + i as u64).expect("draws");
        let mut worst_gap = f64::NEG_INFINITY;
        let mut skipped = 0;
        for d in &draws {
            skipped += d.skipped;
            match d.tightest() {
                Some((_, b)) => {
                    worst_gap = worst_gap.max(d.measured - b);
                    ok &= d.measured <= b + slack;
                }
                None => ok = false,
            }
        }
        parts.push(format!("{} max(E-bound) {:.2e}, {} rank-deficient splits skipped", s.name(), worst_gap, skipped));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let (ok, detail) = expectation_check(SketchMethod::Method2);
    let eig = Spectrum::Step { high: 100.0, low: 2.0, count: 10 }.eigenvalues(110);
    let tail_sq: f64 = eig[10..].iter().map(|v| v * v).sum();
    let head_inv: f64 = eig[..10].iter().map(|v| 1.0 / v).sum();
    let tail: f64 = eig[10..].iter().sum();
    let worked_example = tail_sq * head_inv == 40.0 && tail == 200.0;
    outcome(ok && worked_example, format!("{detail}; Tr(S2^2)Tr(S1^-1) = {}, Tr S2 = {tail}", tail_sq * head_inv))
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut worst: f64 = f64::NEG_INFINITY;
    for (i, s) in spectra().iter().enumerate() {
        let g = spectrum_matrix(s, 300 + i as u64);
        let slack = 1e-9 * g.frobenius_norm_sq();
        for (direct, sym) in paired_symmetric_draws(&g, K, L, 200, 50 + i as u64).expect("draws") {
            ok &= sym <= direct + slack;
            worst = worst.max((sym - direct) / g.frobenius_norm_sq());
        }
    }
    outcome(ok, format!("600 pairs, max (E_sym - E_direct)/||G||^2 = {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in 0..10u64 {
        let rank = K - 2;
        let g = gaussian_matrix(P, rank, 700 + t).expect("shape").matmul(&gaussian_matrix(rank, 100, 800 + t).expect("shape")).expect("shape");
        for method in SketchMethod::ALL {
            let state = sketch_columns(&g, method, K, L, t).expect("sketch");
            let b = state.extract_basis(DEFAULT_RANK_TOL).expect("basis");
            worst = worst.max(reconstruction_error(&g, &b).expect("metric") / g.frobenius_norm_sq());
        }
    }
    outcome(worst < 1e-8, format!("rank k-2 inputs, max E_G/||G||^2 = {worst:.2e}"))
}

fn criterion_7() -> Outcome {
    let spec = BenchmarkSpec {
        family: Family::Rotated,
        source: Source::Synthetic(SyntheticSpec { seed: 3, dims: 16, classes: 10, points_per_class: 60, spread: 0.7 }),
        num_tasks: 2,
        rotation_step_degrees: 30.0,
        seed: 3,
    };
    let tasks = build_tasks(&spec, &load_base(&spec).expect("data")).expect("tasks");
    let mut model = MlpModel::init(&[16, 50, 50, 10], derive_seed(3, tag::MODEL_INIT)).expect("model");
    let cfg = LearnerConfig {
        learning_rate: 1e-3,
        epochs: 5,
        s: 100,
        batch_size: 16,
        seed: 3,
        log_projection: true,
        ..LearnerConfig::new(LearnerKind::OgdFull)
    };
    let train1 = tasks.tasks()[0].train.clone();
    let mut points: Vec<LabeledExample> = Vec::new();
    let mut before: Vec<f64> = Vec::new();
    let mut after: Vec<f64> = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut steps = 0;
    let run = train_continual_observed(&mut model, &tasks, &cfg, |ev| match ev {
        TrainEvent::TaskEnd { task: 0, model, sampled } => {
            points = sampled.iter().map(|&i| train1[i].clone()).collect();
            before = points.iter().map(|p| model.forward(&p.x).expect("dims")[p.y]).collect();
        }
        TrainEvent::TaskEnd { task: 1, model, .. } => {
            after = points.iter().map(|p| model.forward(&p.x).expect("dims")[p.y]).collect();
        }
        TrainEvent::Step { task: 1, residual: Some(r), delta_norm, .. } => {
            steps += 1;
            if *delta_norm > 0.0 {
                max_ratio = max_ratio.max(r / delta_norm);
            }
        }
        _ => {}
    })
    .expect("training");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
    let change = norm(&diff) / norm(&before);
    let ok = steps > 0 && max_ratio <= 1e-10 && run.diagnostics.max_projection_ratio <= 1e-10 && change < 0.01;
    outcome(ok, format!("{steps} projected steps, max |B^T dw|/|dw| = {max_ratio:.2e}, task-1 output change {:.3}%", 100.0 * change))
}

fn fd_error(model: &MlpModel, f: &dyn Fn(&MlpModel) -> f64, grad: &[f64], rng: &mut impl Rng) -> f64 {
    let h = 1e-5;
    (0..50)
        .map(|_| {
            let i = rng.random_range(0..model.p());
            let mut a = model.clone();
            a.weights_mut()[i] += h;
            let mut b = model.clone();
            b.weights_mut()[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = rng_from_seed(500 + seed);
        let model = MlpModel::init(&[8, 16, 12, 5], seed).expect("model");
        let mut ex = || {
            LabeledExample::new((0..8).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0..5))
        };
        let one = ex();
        let batch: Vec<_> = (0..6).map(|_| ex()).collect();
        let mut probe = rng_from_seed(600 + seed);
        let g = model.correct_logit_gradient(&one).expect("grad");
        worst = worst.max(fd_error(&model, &|m| m.forward(&one.x).expect("dims")[one.y], &g, &mut probe));
        let (_, g) = model.loss_and_gradient(&batch).expect("grad");
        worst = worst.max(fd_error(&model, &|m| m.loss_and_gradient(&batch).expect("loss").0, &g, &mut probe));
    }
    outcome(worst < 1e-4, format!("max relative finite-difference error {worst:.2e} over 10 models"))
}

fn repo_config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Copies a shipped config into `dir` with its `out_dir` pointed inside `dir`.
fn localized_config(name: &str, dir: &Path) -> std::path::PathBuf {
    let text = std::fs::read_to_string(repo_config(name)).expect("shipped config");
    let body: String = text.lines().filter(|l| !l.trim_start().starts_with("out_dir")).map(|l| format!("{l}\n")).collect();
    let path = dir.join(name);
    std::fs::write(&path, format!("{body}out_dir = out\n")).expect("write config");
    path
}

fn means(records: &[RunRecord]) -> BTreeMap<&'static str, f64> {
    let mut acc: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for r in records {
        acc.entry(r.kind.name()).or_default().push(r.result.final_average);
    }
    acc.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

fn ordering(m: &BTreeMap<&'static str, f64>) -> (bool, String) {
    let sketches = ["sketch1", "sketch2", "sketch3"];
    let mut ok = sketches.iter().all(|s| m["ogd_full"] >= m[s] && m[s] >= m["random_ogd"]);
    ok &= m["random_ogd"] >= m["sgd"];
    ok &= m["sketch1"] - m["sgd"] >= 0.03;
    let listing: Vec<String> = m.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    (ok, listing.join(", "))
}

fn criteria_9_10(dir: &Path) -> (Outcome, Outcome) {
    let cfg_path = localized_config("rotated_desk.cfg", dir);
    let (kv, _) = KeyValues::read(&cfg_path, RUN_KEYS).expect("config");
    let cfg = RunConfig::from_kv(&kv).expect("config");
    let records = execute_runs(&cfg).expect("runs");
    let m = means(&records);
    let (mut ok9, mut detail9) = ordering(&m);
    detail9 = format!("synthetic rotated: {detail9}");

    if let Ok(mnist) = std::env::var("SKETCHOGD_MNIST_DIR") {
        let dir_m = Path::new(&mnist);
        let text = std::fs::read_to_string(repo_config("rotated_mnist.cfg")).expect("shipped config");
        let local = dir.join("rotated_mnist.cfg");
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with("out_dir") && !l.trim_start().starts_with("idx."))
            .map(|l| format!("{l}\n"))
            .collect();
        std::fs::write(
            &local,
            format!(
                "{body}idx.images = {}\nidx.labels = {}\nidx.per_class = 1000\nout_dir = out_mnist\n",
                dir_m.join("train-images-idx3-ubyte").display(),
                dir_m.join("train-labels-idx1-ubyte").display()
            ),
        )
        .expect("write config");
        let (kv, _) = KeyValues::read(&local, RUN_KEYS).expect("config");
        let recs = execute_runs(&RunConfig::from_kv(&kv).expect("config")).expect("runs");
        let (ok, d) = ordering(&means(&recs));
        ok9 &= ok;
        detail9 = format!("{detail9}; MNIST: {d}");
    } else {
        detail9.push_str("; MNIST variant skipped (SKETCHOGD_MNIST_DIR unset)");
    }

    let budget = cfg.learner.memory_budget;
    let mut ok10 = true;
    let mut peaks: BTreeMap<&'static str, usize> = BTreeMap::new();
    for r in &records {
        if r.kind != LearnerKind::OgdFull && r.kind != LearnerKind::Sgd {
            let peak = r.result.diagnostics.peak_stored_vectors;
            ok10 &= peak <= budget;
            let e = peaks.entry(r.kind.name()).or_insert(0);
            *e = (*e).max(peak);
        }
    }
    let p = 1000;
    for method in SketchMethod::ALL {
        let (k, l) = sketch_dims(method, budget).expect("feasible budget");
        let state = SketchState::new(method, p, k, l, 1).expect("sketch");
        let expected = match method {
            SketchMethod::Method1 => p * k,
            SketchMethod::Method2 => 2 * p * k,
            SketchMethod::Method3 => 2 * p * (l.expect("l") + k),
        };
        ok10 &= state.footprint() == expected && state.stored_vectors() <= budget;
    }
    let listing: Vec<String> = peaks.iter().map(|(k, v)| format!("{k} {v}")).collect();
    (outcome(ok9, detail9), outcome(ok10, format!("budget {budget}; peak p-vectors: {}", listing.join(", "))))
}

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("out dir") {
        let path = entry.expect("entry").path();
        // The manifest echoes the config path, which differs between scratch dirs.
        if path.extension().is_some_and(|e| e == "csv" || e == "bin") {
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).expect("read"));
        }
    }
    files
}

fn criterion_11(dir: &Path) -> Outcome {
    let mut ok = true;
    let mut compared = 0;
    for (cfg_name, bounds) in [("rotated_small.cfg", false), ("bounds_quick.cfg", true)] {
        let mut snapshots = Vec::new();
        for _ in 0..2 {
            let run_dir = tempfile::tempdir_in(dir).expect("tempdir");
            let cfg = localized_config(cfg_name, run_dir.path());
            if bounds {
                run_bounds(&cfg).expect("bounds");
            } else {
                run_benchmark(&cfg).expect("run");
            }
            snapshots.push(read_outputs(&run_dir.path().join("out")));
        }
        compared += snapshots[0].len();
        ok &= !snapshots[0].is_empty() && snapshots[0] == snapshots[1];
    }
    let run_dir = tempfile::tempdir_in(dir).expect("tempdir");
    let g = gaussian_matrix(30, 12, 4).expect("shape");
    let input = run_dir.path().join("g.bin");
    std::fs::write(&input, sketchogd_bench::csvio::encode_matrix(&g)).expect("write");
    let a = run_dir.path().join("a.csv");
    let b = run_dir.path().join("b.csv");
    export_spectrum(&input, &a).expect("spectrum");
    export_spectrum(&input, &b).expect("spectrum");
    ok &= std::fs::read(&a).expect("read") == std::fs::read(&b).expect("read");
    outcome(ok, format!("{} output files identical across reruns (run, bounds, spectrum)", compared + 1))
}

fn report(results: &mut Vec<(usize, bool)>, n: usize, o: Outcome, d: Option<Duration>) {
    let time = d.map_or("shared run".to_string(), |d| format!("{:.1}s", d.as_secs_f64()));
    println!("criterion {n:>2}: {} ({time}) {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((n, o.pass));
}

fn timed(results: &mut Vec<(usize, bool)>, n: usize, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let o = f();
    report(results, n, o, Some(t.elapsed()));
}

fn main() {
    let scratch = tempfile::tempdir().expect("tempdir");
    let mut results = Vec::new();
    timed(&mut results, 1, criterion_1);
    timed(&mut results, 2, criterion_2);
    timed(&mut results, 3, criterion_3);
    timed(&mut results, 4, criterion_4);
    timed(&mut results, 5, criterion_5);
    timed(&mut results, 6, criterion_6);
    timed(&mut results, 7, criterion_7);
    timed(&mut results, 8, criterion_8);
    let start = Instant::now();
    let (c9, c10) = criteria_9_10(scratch.path());
    report(&mut results, 9, c9, Some(start.elapsed()));
    report(&mut results, 10, c10, None);
    timed(&mut results, 11, || criterion_11(scratch.path()));

    let failed: Vec<usize> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: FAILED criteria {failed:?}");
        std::process::exit(1);
    }
}
