//! The `run`, `bounds` and `spectrum` subcommands.
//!
//! Every emitted file is a pure function of the config and data files:
//! no timestamps or wall times are written, floats use Rust's shortest
//! round-trip formatting, and parallel work is collected in a fixed order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use sketchogd::continual::{train_continual, LearnerConfig, LearnerKind, RunResult};
use sketchogd::linalg::{svd, DenseMatrix};
use sketchogd::metric_bounds::{matrix_with_spectrum, stable_rank, verify_bound_montecarlo, BoundReport, Spectrum};
use sketchogd::model::MlpModel;
use sketchogd::rng::{derive_seed, tag, RNG_ALGORITHM};
use sketchogd::sketch::SketchMethod;

use crate::config::{BoundsConfig, KeyValues, RunConfig, SpectrumChoice, BOUNDS_KEYS, RUN_KEYS};
use crate::csvio::{encode_matrix, load_gradient_matrix, write_file};
use crate::error::{BenchError, Result};
use crate::tasks::{build_tasks, load_base, Source};

pub const TRAJECTORY_HEADER: &str = "run_id,kind,seed,task,epoch_global,accuracy";
pub const SUMMARY_HEADER: &str = "run_id,kind,seed,num_tasks,final_average,peak_stored_vectors,memory_budget";
pub const SPECTRUM_HEADER: &str = "index,singular_value";

/// One finished training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub kind: LearnerKind,
    pub seed: u64,
    pub result: RunResult,
}

impl RunRecord {
    pub fn run_id(&self) -> String {
        format!("{}_seed{}", self.kind, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

pub fn trajectory_csv(rec: &RunRecord) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for cp in &rec.result.checkpoints {
        for (task, acc) in cp.accuracies.iter().enumerate() {
            writeln!(s, "{},{},{},{task},{},{acc}", rec.run_id(), rec.kind, rec.seed, cp.epoch_global).expect("string write");
        }
    }
    s
}

pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in records {
        let res = &r.result;
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.run_id(),
            r.kind,
            r.seed,
            res.diagnostics.stored_after_task.len(),
            res.final_average,
            res.diagnostics.peak_stored_vectors,
            res.config.memory_budget
        )
        .expect("string write");
    }
    s
}

/// Trains every `(kind, seed)` pair of a parsed config.
pub fn execute_runs(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    let base = load_base(&cfg.benchmark)?;
    let tasks = build_tasks(&cfg.benchmark, &base)?;
    let mut dims = vec![tasks.input_dim()];
    dims.extend(&cfg.hidden);
    dims.push(base.num_classes);
    let jobs: Vec<(LearnerKind, u64)> = cfg.kinds.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    jobs.par_iter()
        .map(|&(kind, seed)| {
            let mut model = MlpModel::init(&dims, derive_seed(seed, tag::MODEL_INIT))?;
            let config = LearnerConfig { kind, seed, ..cfg.learner.clone() };
            let result = train_continual(&mut model, &tasks, &config)?;
            Ok(RunRecord { kind, seed, result })
        })
        .collect()
}

pub fn run_benchmark(config_path: &Path) -> Result<RunOutcome> {
    let (kv, config_bytes) = KeyValues::read(config_path, RUN_KEYS)?;
    let cfg = RunConfig::from_kv(&kv)?;
    let mut input_hash = Sha256::new();
    input_hash.update(&config_bytes);
    if let Source::Idx { images, labels, .. } = &cfg.benchmark.source {
        for p in [images, labels] {
            input_hash.update(std::fs::read(p).map_err(|e| BenchError::io(p, e))?);
        }
    }
    let records = execute_runs(&cfg)?;

    create_dir(&cfg.out_dir)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for rec in &records {
        files.push((format!("trajectory_{}.csv", rec.run_id()), trajectory_csv(rec).into_bytes()));
        if cfg.learner.dump_gradients {
            let g = &rec.result.diagnostics.sampled_gradients;
            let p = g.first().map_or(0, Vec::len);
            let rows = if g.is_empty() { DenseMatrix::zeros(0, 0) } else { DenseMatrix::from_rows(g)? };
            debug_assert_eq!(rows.cols(), p);
            files.push((format!("gradients_{}.bin", rec.run_id()), encode_matrix(&rows)));
        }
    }
    files.push(("summary.csv".into(), summary_csv(&records).into_bytes()));

    let mut manifest = String::new();
    writeln!(manifest, "config = {}", config_path.display()).expect("string write");
    writeln!(manifest, "config_sha256 = {}", sha256_hex(&config_bytes)).expect("string write");
    writeln!(manifest, "inputs_sha256 = {}", hex::encode(input_hash.finalize())).expect("string write");
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    writeln!(manifest, "seeds = {}", seeds.join(",")).expect("string write");
    writeln!(manifest, "benchmark_seed = {}", cfg.benchmark.seed).expect("string write");
    if let Source::Synthetic(s) = &cfg.benchmark.source {
        writeln!(manifest, "synthetic_seed = {}", s.seed).expect("string write");
    }
    let kinds: Vec<&str> = cfg.kinds.iter().map(|k| k.name()).collect();
    writeln!(manifest, "kinds = {}", kinds.join(",")).expect("string write");
    writeln!(manifest, "rng = {RNG_ALGORITHM}").expect("string write");
    let mut outputs = Vec::new();
    for (name, bytes) in &files {
        let path = cfg.out_dir.join(name);
        write_file(&path, bytes)?;
        writeln!(manifest, "output = {name} sha256:{}", sha256_hex(bytes)).expect("string write");
        outputs.push(path);
    }
    let manifest_path = cfg.out_dir.join("manifest.txt");
    write_file(&manifest_path, manifest.as_bytes())?;
    Ok(RunOutcome { records, outputs, manifest: manifest_path })
}

#[derive(Debug, Clone)]
pub struct BoundsOutcome {
    /// `(spectrum name, report)` in output order.
    pub reports: Vec<(String, BoundReport)>,
    pub csv: PathBuf,
}

impl BoundsOutcome {
    pub fn violations(&self) -> Vec<&(String, BoundReport)> {
        self.reports.iter().filter(|(_, r)| !r.within_bound()).collect()
    }
}

pub fn bounds_csv(reports: &[(String, BoundReport)]) -> String {
    let mut s = format!("spectrum,{}\n", BoundReport::CSV_HEADER);
    for (name, r) in reports {
        writeln!(s, "{name},{}", r.to_csv_row()).expect("string write");
    }
    s
}

/// Gradient matrix `G` (p × n) for one spectrum choice.
pub fn bounds_matrix(cfg: &BoundsConfig, choice: &SpectrumChoice) -> Result<DenseMatrix> {
    let spectrum = match choice {
        SpectrumChoice::Flat => Spectrum::Flat { lambda: cfg.lambda },
        SpectrumChoice::Linear => Spectrum::Linear { lambda: cfg.lambda },
        SpectrumChoice::Step => Spectrum::Step { high: cfg.step_high, low: cfg.step_low, count: cfg.step_count },
        SpectrumChoice::FromGradients(path) => {
            let rows = load_gradient_matrix(path)?;
            if rows.rows() == 0 || rows.cols() == 0 {
                return Err(BenchError::Data(format!("{} holds no gradients", path.display())));
            }
            return Ok(rows.transpose());
        }
    };
    Ok(matrix_with_spectrum(&spectrum.eigenvalues(cfg.p), cfg.n, cfg.seed)?)
}

/// Writes `bounds.csv` and reports; violations are returned as data, not as an error.
pub fn run_bounds(config_path: &Path) -> Result<BoundsOutcome> {
    let (kv, _) = KeyValues::read(config_path, BOUNDS_KEYS)?;
    let cfg = BoundsConfig::from_kv(&kv)?;
    let mut reports = Vec::new();
    for choice in &cfg.spectra {
        let g = bounds_matrix(&cfg, choice)?;
        if cfg.k > g.rows() {
            return Err(BenchError::Config(format!("k = {} exceeds p = {} for spectrum {}", cfg.k, g.rows(), choice.name())));
        }
        for method in SketchMethod::ALL {
            let report = verify_bound_montecarlo(&g, method, cfg.k, cfg.l, cfg.trials, cfg.seed)?;
            reports.push((choice.name().to_string(), report));
        }
    }
    create_dir(&cfg.out_dir)?;
    let csv = cfg.out_dir.join("bounds.csv");
    write_file(&csv, bounds_csv(&reports).as_bytes())?;
    Ok(BoundsOutcome { reports, csv })
}

/// Singular values of a gradient matrix with the stable-rank footer.
pub fn spectrum_csv(rows: &DenseMatrix) -> Result<String> {
    if rows.rows() == 0 || rows.cols() == 0 {
        return Err(BenchError::Data("spectrum export needs a nonempty gradient matrix".into()));
    }
    let sigma = svd(rows)?.sigma;
    let sr = stable_rank(&sigma)?;
    let mut s = String::from(SPECTRUM_HEADER);
    s.push('\n');
    for (i, v) in sigma.iter().enumerate() {
        writeln!(s, "{},{v}", i + 1).expect("string write");
    }
    writeln!(s, "stable_rank,{sr}").expect("string write");
    Ok(s)
}

pub fn export_spectrum(input: &Path, out_path: &Path) -> Result<()> {
    let rows = load_gradient_matrix(input)?;
    let csv = spectrum_csv(&rows)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(out_path, csv.as_bytes())
}
