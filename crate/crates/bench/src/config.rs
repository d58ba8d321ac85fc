//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sketchogd::continual::{LearnerConfig, LearnerKind, PcaMode};

use crate::error::{BenchError, Result};
use crate::tasks::{BenchmarkSpec, Family, Source, SyntheticSpec};

pub const RUN_KEYS: &[&str] = &[
    "benchmark.family",
    "benchmark.source",
    "benchmark.num_tasks",
    "benchmark.rotation_step",
    "benchmark.seed",
    "synthetic.seed",
    "synthetic.dims",
    "synthetic.classes",
    "synthetic.points_per_class",
    "synthetic.spread",
    "idx.images",
    "idx.labels",
    "idx.per_class",
    "model.hidden",
    "learner.kind",
    "learner.budget",
    "learner.s",
    "learner.epochs",
    "learner.lr",
    "learner.batch_size",
    "learner.pca_mode",
    "learner.ogd_cap",
    "seeds",
    "out_dir",
    "dump_gradients",
];

pub const BOUNDS_KEYS: &[&str] =
    &["spectrum", "p", "n", "k", "l", "trials", "seed", "lambda", "step.high", "step.low", "step.count", "out_dir"];

/// Parsed key-value pairs, remembering where the file lives for relative paths.
#[derive(Debug, Clone)]
pub struct KeyValues {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl KeyValues {
    pub fn parse(text: &str, base_dir: &Path, valid: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| BenchError::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let k = k.trim();
            if !valid.contains(&k) {
                return Err(BenchError::Config(format!(
                    "line {}: unknown key `{k}`; valid keys are: {}",
                    n + 1,
                    valid.join(", ")
                )));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(BenchError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Self { values, base_dir: base_dir.to_path_buf() })
    }

    pub fn read(path: &Path, valid: &[&str]) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| BenchError::Config(format!("{} is not UTF-8", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(&text, dir, valid)?, bytes))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| BenchError::Config(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| BenchError::Config(format!("missing required key `{key}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|_| BenchError::Config(format!("`{key}`: cannot parse `{s}`"))))
                    .collect()
            })
            .transpose()
    }

    pub fn path(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub benchmark: BenchmarkSpec,
    pub hidden: Vec<usize>,
    pub kinds: Vec<LearnerKind>,
    /// Learner settings shared by every kind; `kind` and `seed` are overwritten per run.
    pub learner: LearnerConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let family_raw: String = kv.require("benchmark.family")?;
        let family = Family::parse(&family_raw)
            .ok_or_else(|| BenchError::Config(format!("unknown benchmark.family `{family_raw}` (rotated, permuted, split)")))?;
        let source = match kv.raw("benchmark.source").unwrap_or("synthetic") {
            "synthetic" => Source::Synthetic(SyntheticSpec {
                seed: kv.get_or("synthetic.seed", 0)?,
                dims: kv.get_or("synthetic.dims", 16)?,
                classes: kv.get_or("synthetic.classes", 10)?,
                points_per_class: kv.get_or("synthetic.points_per_class", 100)?,
                spread: kv.get_or("synthetic.spread", 0.5)?,
            }),
            "idx" => Source::Idx {
                images: kv.path(&kv.require::<String>("idx.images")?),
                labels: kv.path(&kv.require::<String>("idx.labels")?),
                per_class: kv.get("idx.per_class")?,
            },
            other => return Err(BenchError::Config(format!("unknown benchmark.source `{other}` (synthetic, idx)"))),
        };
        let benchmark = BenchmarkSpec {
            family,
            source,
            num_tasks: kv.get_or("benchmark.num_tasks", 10)?,
            rotation_step_degrees: kv.get_or("benchmark.rotation_step", 5.0)?,
            seed: kv.get_or("benchmark.seed", 0)?,
        };
        let kinds: Vec<LearnerKind> = kv
            .raw("learner.kind")
            .ok_or_else(|| BenchError::Config("missing required key `learner.kind`".into()))?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(LearnerKind::from_str)
            .collect::<std::result::Result<_, _>>()?;
        if kinds.is_empty() {
            return Err(BenchError::Config("`learner.kind` lists no learners".into()));
        }
        let defaults = LearnerConfig::new(kinds[0]);
        let pca_mode = match kv.raw("learner.pca_mode") {
            Some(v) => v.parse::<PcaMode>()?,
            None => PcaMode::default(),
        };
        let learner = LearnerConfig {
            memory_budget: kv.get_or("learner.budget", defaults.memory_budget)?,
            s: kv.get_or("learner.s", defaults.s)?,
            epochs: kv.get_or("learner.epochs", defaults.epochs)?,
            learning_rate: kv.get_or("learner.lr", defaults.learning_rate)?,
            batch_size: kv.get_or("learner.batch_size", defaults.batch_size)?,
            pca_mode,
            ogd_cap: kv.get("learner.ogd_cap")?,
            dump_gradients: kv.get_or("dump_gradients", false)?,
            ..defaults
        };
        for &kind in &kinds {
            LearnerConfig { kind, ..learner.clone() }.validate()?;
        }
        let seeds = kv.list("seeds")?.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(BenchError::Config("`seeds` lists no seeds".into()));
        }
        Ok(Self {
            benchmark,
            hidden: kv.list("model.hidden")?.unwrap_or_else(|| vec![100, 100]),
            kinds,
            learner,
            seeds,
            out_dir: kv.path(kv.raw("out_dir").unwrap_or("out")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumChoice {
    Flat,
    Linear,
    Step,
    FromGradients(PathBuf),
}

impl SpectrumChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SpectrumChoice::Flat => "flat",
            SpectrumChoice::Linear => "linear",
            SpectrumChoice::Step => "step",
            SpectrumChoice::FromGradients(_) => "from_gradients",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundsConfig {
    pub spectra: Vec<SpectrumChoice>,
    pub p: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub trials: usize,
    pub seed: u64,
    pub lambda: f64,
    pub step_high: f64,
    pub step_low: f64,
    pub step_count: usize,
    pub out_dir: PathBuf,
}

impl BoundsConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let raw = kv.raw("spectrum").unwrap_or("flat,linear,step");
        let mut spectra = Vec::new();
        // Split on commas outside parentheses so `from_gradients(a,b.csv)` survives.
        let mut depth = 0;
        let mut cur = String::new();
        let mut items = Vec::new();
        for ch in raw.chars() {
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                ',' if depth == 0 => {
                    items.push(std::mem::take(&mut cur));
                    continue;
                }
                _ => {}
            }
            cur.push(ch);
        }
        items.push(cur);
        for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
            spectra.push(match item {
                "flat" => SpectrumChoice::Flat,
                "linear" => SpectrumChoice::Linear,
                "step" => SpectrumChoice::Step,
                s if s.starts_with("from_gradients(") && s.ends_with(')') => {
                    SpectrumChoice::FromGradients(kv.path(s["from_gradients(".len()..s.len() - 1].trim()))
                }
                other => {
                    return Err(BenchError::Config(format!(
                        "unknown spectrum `{other}` (flat, linear, step, from_gradients(path))"
                    )))
                }
            });
        }
        let p = kv.get_or("p", 200)?;
        let k = kv.get_or("k", 20)?;
        let cfg = Self {
            spectra,
            p,
            n: kv.get_or("n", p)?,
            k,
            l: kv.get_or("l", k + 2)?,
            trials: kv.get_or("trials", 300)?,
            seed: kv.get_or("seed", 0)?,
            lambda: kv.get_or("lambda", 1.0)?,
            step_high: kv.get_or("step.high", 100.0)?,
            step_low: kv.get_or("step.low", 2.0)?,
            step_count: kv.get_or("step.count", 10)?,
            out_dir: kv.path(kv.raw("out_dir").unwrap_or("out")),
        };
        if cfg.k < 2 || cfg.l < cfg.k {
            return Err(BenchError::Config(format!("need 2 <= k <= l, got k = {}, l = {}", cfg.k, cfg.l)));
        }
        Ok(cfg)
    }
}
