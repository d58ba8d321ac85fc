//! Benchmark definitions: base data and the per-task transformations.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use sketchogd::continual::{Task, TaskSequence};
use sketchogd::linalg::gaussian_matrix;
use sketchogd::model::LabeledExample;
use sketchogd::rng::{derive_seed, rng_from_seed, tag};

use crate::error::{BenchError, Result};
use crate::idx::load_idx;

/// Fraction of each class used for training; the rest is the test set.
pub const TRAIN_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Rotated,
    Permuted,
    Split,
}

impl Family {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rotated" => Some(Family::Rotated),
            "permuted" => Some(Family::Permuted),
            "split" => Some(Family::Split),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Rotated => "rotated",
            Family::Permuted => "permuted",
            Family::Split => "split",
        }
    }
}

/// Gaussian clusters: one standard-normal mean per class, isotropic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub dims: usize,
    pub classes: usize,
    pub points_per_class: usize,
    /// Noise standard deviation.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Idx { images: PathBuf, labels: PathBuf, per_class: Option<usize> },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub family: Family,
    pub source: Source,
    pub num_tasks: usize,
    pub rotation_step_degrees: f64,
    /// Seeds the train/test split and the pixel permutations.
    pub seed: u64,
}

/// Untransformed examples plus what the transforms need to know about them.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseData {
    pub examples: Vec<LabeledExample>,
    /// `(rows, cols)` for image data; `None` for flat feature vectors.
    pub image_shape: Option<(usize, usize)>,
    pub num_classes: usize,
}

impl BaseData {
    pub fn input_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.x.len())
    }
}

pub fn synthetic_clusters(spec: &SyntheticSpec) -> Result<BaseData> {
    if spec.dims == 0 || spec.classes == 0 || spec.points_per_class == 0 {
        return Err(BenchError::Config("synthetic dims, classes and points_per_class must be positive".into()));
    }
    let means = gaussian_matrix(spec.classes, spec.dims, derive_seed(spec.seed, tag::SYNTHETIC_DATA))?;
    let noise = gaussian_matrix(
        spec.classes * spec.points_per_class,
        spec.dims,
        derive_seed(spec.seed, tag::SYNTHETIC_DATA + 1),
    )?;
    let examples = (0..spec.classes * spec.points_per_class)
        .map(|i| {
            let y = i / spec.points_per_class;
            let x = means.row(y).iter().zip(noise.row(i)).map(|(m, n)| m + spec.spread * n).collect();
            LabeledExample::new(x, y)
        })
        .collect();
    Ok(BaseData { examples, image_shape: None, num_classes: spec.classes })
}

/// Loads or generates the base examples. Relative IDX paths must already be resolved.
pub fn load_base(spec: &BenchmarkSpec) -> Result<BaseData> {
    match &spec.source {
        Source::Synthetic(s) => synthetic_clusters(s),
        Source::Idx { images, labels, per_class } => {
            let (rows, cols, mut examples) = load_idx(images, labels)?;
            if let Some(cap) = per_class {
                let mut seen = std::collections::HashMap::new();
                examples.retain(|e| {
                    let n = seen.entry(e.y).or_insert(0usize);
                    *n += 1;
                    *n <= *cap
                });
            }
            if examples.is_empty() {
                return Err(BenchError::Data("IDX files contain no examples".into()));
            }
            let num_classes = examples.iter().map(|e| e.y).max().unwrap_or(0) + 1;
            Ok(BaseData { examples, image_shape: Some((rows, cols)), num_classes })
        }
    }
}

/// Bilinear rotation about the image centre with zero padding. `0°` returns
/// the input unchanged.
pub fn rotate_image(pixels: &[f64], rows: usize, cols: usize, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return pixels.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let at = |r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= rows as isize || q >= cols as isize {
            0.0
        } else {
            pixels[r as usize * cols + q as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for q in 0..cols {
            let (y, x) = (r as f64 - cy, q as f64 - cx);
            // Inverse rotation maps the output pixel back into the source.
            let sx = c * x + s * y + cx;
            let sy = -s * x + c * y + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[r * cols + q] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Rotates every coordinate pair `(x₂ᵢ, x₂ᵢ₊₁)` by the same angle.
pub fn rotate_planar(x: &[f64], degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return x.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    x.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect()
}

/// Pixel permutation of task `t`; task 0 is the identity.
pub fn task_permutation(dim: usize, seed: u64, t: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dim).collect();
    if t > 0 {
        perm.shuffle(&mut rng_from_seed(derive_seed(derive_seed(seed, tag::PERMUTATION), t as u64)));
    }
    perm
}

/// Per-class `85/15` split, deterministic in `seed`.
pub fn train_test_split(examples: &[LabeledExample], seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let num_classes = examples.iter().map(|e| e.y).max().map_or(0, |m| m + 1);
    let mut rng = rng_from_seed(derive_seed(seed, tag::TRAIN_TEST_SPLIT));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..num_classes {
        let mut members: Vec<&LabeledExample> = examples.iter().filter(|e| e.y == class).collect();
        members.shuffle(&mut rng);
        let n_train = ((members.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1.min(members.len()), members.len());
        train.extend(members[..n_train].iter().map(|e| (*e).clone()));
        test.extend(members[n_train..].iter().map(|e| (*e).clone()));
    }
    (train, test)
}

pub fn build_tasks(spec: &BenchmarkSpec, base: &BaseData) -> Result<TaskSequence> {
    if spec.num_tasks == 0 {
        return Err(BenchError::Config("benchmark.num_tasks must be at least 1".into()));
    }
    let (train, test) = train_test_split(&base.examples, spec.seed);
    let dim = base.input_dim();
    let tasks = match spec.family {
        Family::Rotated => {
            let rotate: Box<dyn Fn(&[f64], f64) -> Vec<f64>> = match base.image_shape {
                Some((rows, cols)) if rows == cols => Box::new(move |x, d| rotate_image(x, rows, cols, d)),
                Some((rows, cols)) => {
                    return Err(BenchError::Config(format!("rotation needs square images, got {rows}x{cols}")))
                }
                None if dim % 2 == 0 => Box::new(rotate_planar),
                None => return Err(BenchError::Config(format!("planar rotation needs an even input dimension, got {dim}"))),
            };
            (0..spec.num_tasks)
                .map(|t| {
                    let deg = t as f64 * spec.rotation_step_degrees;
                    let map = |v: &[LabeledExample]| v.iter().map(|e| LabeledExample::new(rotate(&e.x, deg), e.y)).collect();
                    Task { train: map(&train), test: map(&test) }
                })
                .collect()
        }
        Family::Permuted => (0..spec.num_tasks)
            .map(|t| {
                let perm = task_permutation(dim, spec.seed, t);
                let map = |v: &[LabeledExample]| {
                    v.iter().map(|e| LabeledExample::new(perm.iter().map(|&i| e.x[i]).collect(), e.y)).collect()
                };
                Task { train: map(&train), test: map(&test) }
            })
            .collect(),
        Family::Split => {
            if base.num_classes % spec.num_tasks != 0 {
                return Err(BenchError::Config(format!(
                    "{} classes cannot be split evenly into {} tasks",
                    base.num_classes, spec.num_tasks
                )));
            }
            let per = base.num_classes / spec.num_tasks;
            (0..spec.num_tasks)
                .map(|t| {
                    let keep = |v: &[LabeledExample]| v.iter().filter(|e| e.y / per == t).cloned().collect();
                    Task { train: keep(&train), test: keep(&test) }
                })
                .collect()
        }
    };
    Ok(TaskSequence::new(tasks)?)
}
