use std::path::Path;
use std::process::Command;

use sketchogd::linalg::{gaussian_matrix, DenseMatrix};
use sketchogd::metric_bounds::split_svd;
use sketchogd_bench::csvio::{encode_matrix, read_table, Table};
use sketchogd_bench::runner::{spectrum_csv, SPECTRUM_HEADER, SUMMARY_HEADER, TRAJECTORY_HEADER};

fn bench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).output().expect("spawn bench")
}

fn table(path: &Path) -> Table {
    read_table(&std::fs::read_to_string(path).expect("read csv")).expect("parse csv")
}

const SMALL_RUN: &str = "\
benchmark.family = rotated
benchmark.num_tasks = 2
benchmark.rotation_step = 20
synthetic.dims = 4
synthetic.classes = 3
synthetic.points_per_class = 20
model.hidden = 6
learner.kind = sketch1
learner.budget = 8
learner.s = 10
learner.epochs = 2
learner.batch_size = 4
seeds = 1,2,3
out_dir = out
";

#[test]
fn run_writes_one_trajectory_per_seed_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let out = bench(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    for seed in 1..=3 {
        let t = table(&out_dir.join(format!("trajectory_sketch1_seed{seed}.csv")));
        assert_eq!(t.header.join(","), TRAJECTORY_HEADER);
        // 2 tasks × 2 epochs checkpoints, each reporting both tasks.
        assert_eq!(t.rows.len(), 8);
        let acc = t.column("accuracy").unwrap();
        assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r[acc].parse::<f64>().unwrap())));
    }
    let s = table(&out_dir.join("summary.csv"));
    assert_eq!(s.header.join(","), SUMMARY_HEADER);
    assert_eq!(s.rows.len(), 3);
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 1,2,3") && manifest.contains("ChaCha8"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, format!("{SMALL_RUN}learner.momentum = 0.9\n")).unwrap();
    let out = bench(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learner.momentum") && err.contains("learner.budget"), "{err}");
}

#[test]
fn missing_idx_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("idx.cfg");
    std::fs::write(
        &cfg,
        "benchmark.family = permuted\nbenchmark.source = idx\nidx.images = nope-images\nidx.labels = nope-labels\nlearner.kind = sgd\n",
    )
    .unwrap();
    assert_eq!(bench(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(bench(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn idx_permuted_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Vec<u8>> = (0..24).map(|i| (0..16).map(|j| ((i * 7 + j * 13) % 256) as u8).collect()).collect();
    let labels: Vec<u8> = (0..24).map(|i| (i % 2) as u8).collect();
    let (img, lab) = sketchogd_bench::idx::encode_idx(4, 4, &images, &labels);
    std::fs::write(dir.path().join("img.idx"), img).unwrap();
    std::fs::write(dir.path().join("lab.idx"), lab).unwrap();
    let cfg = dir.path().join("idx.cfg");
    std::fs::write(
        &cfg,
        "benchmark.family = rotated\nbenchmark.source = idx\nbenchmark.num_tasks = 2\nidx.images = img.idx\nidx.labels = lab.idx\n\
         model.hidden = 5\nlearner.kind = random_ogd\nlearner.budget = 4\nlearner.s = 3\nlearner.epochs = 1\nout_dir = o\n",
    )
    .unwrap();
    let out = bench(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(table(&dir.path().join("o/summary.csv")).rows.len(), 1);
}

#[test]
fn bounds_report_flat_and_step_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.cfg");
    std::fs::write(&cfg, "spectrum = flat, step\np = 200\nk = 20\ntrials = 30\nseed = 2\nout_dir = out\n").unwrap();
    let out = bench(&["bounds", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = table(&dir.path().join("out/bounds.csv"));
    assert_eq!(t.rows.len(), 6);
    let (sp, m, b, g) =
        (t.column("spectrum").unwrap(), t.column("method").unwrap(), t.column("bound_value").unwrap(), t.column("optimal_gamma").unwrap());
    let row = |s: &str, method: &str| t.rows.iter().find(|r| r[sp] == s && r[m] == method).unwrap().clone();
    let flat1 = row("flat", "1");
    assert!((flat1[b].parse::<f64>().unwrap() - 200.0).abs() < 1e-9);
    assert_eq!(flat1[g], "0");
    let step1: f64 = row("step", "1")[b].parse().unwrap();
    let step2 = row("step", "2");
    let gamma: f64 = step2[g].parse().unwrap();
    // 40·γ/(k−γ−1) + 200 at γ* = 10 with p = 200 (190 tail entries of 2 give Tr Σ2 = 380).
    assert_eq!(gamma, 10.0);
    let expected = 10.0 / 9.0 * (190.0 * 4.0 * 0.1) + 380.0;
    assert!((step2[b].parse::<f64>().unwrap() - expected).abs() < 1e-9);
    assert!(expected < step1);
}

#[test]
fn unknown_spectrum_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.cfg");
    std::fs::write(&cfg, "spectrum = wavy\n").unwrap();
    assert_eq!(bench(&["bounds", cfg.to_str().unwrap()]).status.code(), Some(1));
}

fn spectrum_rows(m: &DenseMatrix) -> (Vec<f64>, f64) {
    let t = read_table(&spectrum_csv(m).unwrap()).unwrap();
    assert_eq!(t.header.join(","), SPECTRUM_HEADER);
    let (footer, rows) = t.rows.split_last().unwrap();
    assert_eq!(footer[0], "stable_rank");
    (rows.iter().map(|r| r[1].parse().unwrap()).collect(), footer[1].parse().unwrap())
}

#[test]
fn spectrum_of_diagonal_and_rank_one() {
    let (sv, sr) = spectrum_rows(&DenseMatrix::from_diag(&[3.0, 2.0, 1.0]));
    assert!(sv.iter().zip([3.0, 2.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!((sr - 14.0 / 9.0).abs() < 1e-12);

    let u = [1.0, 2.0, -1.0];
    let rows: Vec<Vec<f64>> = (1..=4).map(|c| u.iter().map(|v| v * c as f64).collect()).collect();
    let (sv, sr) = spectrum_rows(&DenseMatrix::from_rows(&rows).unwrap());
    assert_eq!(sv.iter().filter(|v| **v > 1e-10).count(), 1);
    assert!((sr - 1.0).abs() < 1e-12);
}

#[test]
fn spectrum_matches_split_svd_and_cli_round_trip() {
    let g = gaussian_matrix(12, 30, 5).unwrap();
    let (sv, _) = spectrum_rows(&g);
    let split = split_svd(&g.transpose(), 0).unwrap();
    for (a, b) in sv.iter().zip(split.diag()) {
        assert!((a - b.sqrt()).abs() < 1e-9);
    }

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("g.bin");
    std::fs::write(&bin, encode_matrix(&g)).unwrap();
    let csv_in = dir.path().join("g.csv");
    let text: String = (0..g.rows()).map(|i| {
        let r: Vec<String> = g.row(i).iter().map(|v| v.to_string()).collect();
        r.join(",") + "\n"
    }).collect();
    std::fs::write(&csv_in, text).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(bench(&["spectrum", bin.to_str().unwrap(), a.to_str().unwrap()]).status.success());
    assert!(bench(&["spectrum", csv_in.to_str().unwrap(), b.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(bench(&["spectrum", empty.to_str().unwrap(), a.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = bench(&["selftest"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("PASS").count(), 5);
}
