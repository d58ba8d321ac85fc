//! Sequential multi-task training with projected updates.
//!
//! Every learner shares one loop: at the start of each task the learner's
//! memory is turned into an orthonormal basis `B` (zero-width on the first
//! task and always for [`LearnerKind::Sgd`]); each base SGD step `Δw` is
//! replaced by `Δw − B(BᵀΔw)`; after the task, `s` training points are
//! sampled without replacement and their correct-logit gradients, taken at
//! the end-of-task weights, are absorbed into memory.
//!
//! Randomness is split into independent streams (minibatch order, memory
//! sampling, reservoir, sketch matrices) so the task-1 trajectory does not
//! depend on the learner kind.
//!
//! Memory is counted in p-vectors of persistent learner state: stored
//! gradients or basis vectors, and the sketch matrices. The basis built from
//! that state at a task boundary is a derived cache and is not counted.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{axpy, dot, norm, orth, svd, DenseMatrix, LinalgError, DEFAULT_RANK_TOL};
use crate::model::{LabeledExample, MlpModel, ModelError};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::sketch::{SketchError, SketchMethod, SketchState};

#[derive(Debug, Error)]
pub enum ContinualError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ContinualError>;

/// Residual threshold, relative to the incoming norm, below which a gradient
/// adds no new direction to a Gram-Schmidt store.
pub const GS_DROP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    Sgd,
    OgdFull,
    RandomOgd,
    PcaOgd,
    Sketch1,
    Sketch2,
    Sketch3,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 7] = [
        LearnerKind::Sgd,
        LearnerKind::OgdFull,
        LearnerKind::RandomOgd,
        LearnerKind::PcaOgd,
        LearnerKind::Sketch1,
        LearnerKind::Sketch2,
        LearnerKind::Sketch3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Sgd => "sgd",
            LearnerKind::OgdFull => "ogd_full",
            LearnerKind::RandomOgd => "random_ogd",
            LearnerKind::PcaOgd => "pca_ogd",
            LearnerKind::Sketch1 => "sketch1",
            LearnerKind::Sketch2 => "sketch2",
            LearnerKind::Sketch3 => "sketch3",
        }
    }

    pub fn sketch_method(self) -> Option<SketchMethod> {
        match self {
            LearnerKind::Sketch1 => Some(SketchMethod::Method1),
            LearnerKind::Sketch2 => Some(SketchMethod::Method2),
            LearnerKind::Sketch3 => Some(SketchMethod::Method3),
            _ => None,
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = ContinualError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        LearnerKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = LearnerKind::ALL.iter().map(|k| k.name()).collect();
            ContinualError::InvalidArgument(format!("unknown learner kind '{s}', expected one of {}", names.join(", ")))
        })
    }
}

/// How PCA-OGD is charged for the raw gradients it holds before compressing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaMode {
    /// Compresses the same `s` gradients per task as every other learner; the
    /// pre-compression matrix is not charged against the budget.
    #[default]
    EqualGradients,
    /// The pre-compression matrix counts against the budget, so each task
    /// compresses at most `budget − stored` gradients.
    MemoryLimited,
}

impl PcaMode {
    pub fn name(self) -> &'static str {
        match self {
            PcaMode::EqualGradients => "equal_gradients",
            PcaMode::MemoryLimited => "memory_limited",
        }
    }
}

impl FromStr for PcaMode {
    type Err = ContinualError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equal_gradients" | "equal" => Ok(PcaMode::EqualGradients),
            "memory_limited" | "limited" => Ok(PcaMode::MemoryLimited),
            other => Err(ContinualError::InvalidArgument(format!(
                "unknown pca mode '{other}', expected equal_gradients or memory_limited"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// p-vectors the learner may hold.
    pub memory_budget: usize,
    /// Gradients sampled per task.
    pub s: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub pca_mode: PcaMode,
    /// Stored-gradient cap for [`LearnerKind::OgdFull`]; `None` is unlimited.
    pub ogd_cap: Option<usize>,
    /// Measure `‖BᵀΔw_applied‖` at every step (one extra pass over `B`).
    pub log_projection: bool,
    /// Keep every sampled memory gradient in the result.
    pub dump_gradients: bool,
}

impl LearnerConfig {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            memory_budget: 200,
            s: 200,
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
            pca_mode: PcaMode::default(),
            ogd_cap: None,
            log_projection: false,
            dump_gradients: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ContinualError::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ContinualError::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ContinualError::InvalidArgument(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if let Some(method) = self.kind.sketch_method() {
            sketch_dims(method, self.memory_budget)?;
        }
        Ok(())
    }
}

/// Sketch widths `(k, l)` filling `budget` p-vectors: `k = budget` for
/// Method1, `k = budget / 2` for Method2, and `k + l = budget / 2` with
/// `l = k + 2` for Method3.
pub fn sketch_dims(method: SketchMethod, budget: usize) -> Result<(usize, Option<usize>)> {
    let (k, l) = match method {
        SketchMethod::Method1 => (budget, None),
        SketchMethod::Method2 => (budget / 2, None),
        SketchMethod::Method3 => {
            let k = (budget / 2).saturating_sub(2) / 2;
            (k, Some(k + 2))
        }
    };
    if k < 2 {
        return Err(ContinualError::InvalidArgument(format!(
            "memory budget {budget} gives sketch width k = {k} for method {method}; need k >= 2"
        )));
    }
    Ok((k, l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    tasks: Vec<Task>,
    input_dim: usize,
}

impl TaskSequence {
    /// Checks that there is at least one task, every train set is nonempty and
    /// all inputs share one length.
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let first = tasks
            .iter()
            .flat_map(|t| t.train.iter().chain(&t.test))
            .next()
            .ok_or_else(|| ContinualError::InvalidArgument("task sequence has no examples".into()))?;
        let input_dim = first.x.len();
        for (i, t) in tasks.iter().enumerate() {
            if t.train.is_empty() {
                return Err(ContinualError::InvalidArgument(format!("task {i} has an empty training set")));
            }
            if let Some(ex) = t.train.iter().chain(&t.test).find(|ex| ex.x.len() != input_dim) {
                return Err(ContinualError::InvalidArgument(format!(
                    "task {i} has an input of length {}, expected {input_dim}",
                    ex.x.len()
                )));
            }
        }
        Ok(Self { tasks, input_dim })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn max_label(&self) -> usize {
        self.tasks.iter().flat_map(|t| t.train.iter().chain(&t.test)).map(|ex| ex.y).max().unwrap_or(0)
    }
}

/// Test accuracy on every task, taken after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: usize,
    pub epoch: usize,
    /// Epochs completed across the whole run, 1-based.
    pub epoch_global: usize,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Largest `‖BᵀΔw_applied‖ / ‖Δw‖` over projected steps (with `log_projection`).
    pub max_projection_ratio: f64,
    /// Largest memory use seen at any point, in p-vectors.
    pub peak_stored_vectors: usize,
    /// Memory use after each task's absorption.
    pub stored_after_task: Vec<usize>,
    /// Basis width used while training each task.
    pub basis_width: Vec<usize>,
    /// Sampled memory gradients in absorption order (with `dump_gradients`).
    pub sampled_gradients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub checkpoints: Vec<Checkpoint>,
    pub final_average: f64,
    pub config: LearnerConfig,
    pub wall_time: Duration,
    pub diagnostics: Diagnostics,
}

impl RunResult {
    /// Accuracy rows, one per checkpoint, indexed by task.
    pub fn accuracy_matrix(&self) -> Vec<Vec<f64>> {
        self.checkpoints.iter().map(|c| c.accuracies.clone()).collect()
    }
}

/// Progress notifications from [`train_continual_observed`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step {
        task: usize,
        epoch: usize,
        step: usize,
        loss: f64,
        /// `‖Δw‖` before projection.
        delta_norm: f64,
        /// `‖BᵀΔw_applied‖`, when projection logging is on and `B` is nonempty.
        residual: Option<f64>,
        /// The projected update added to the weights.
        applied: &'a [f64],
    },
    /// After training on `task` and before absorbing its gradients.
    TaskEnd { task: usize, model: &'a MlpModel, sampled: &'a [usize] },
}

/// `Δw − B(BᵀΔw)` for a `p × width` basis with orthonormal columns.
pub fn project_update(delta_w: &[f64], basis: &DenseMatrix) -> Result<Vec<f64>> {
    if basis.rows() != delta_w.len() {
        return Err(ContinualError::InvalidArgument(format!(
            "update has length {}, basis has {} rows",
            delta_w.len(),
            basis.rows()
        )));
    }
    if basis.cols() == 0 {
        return Ok(delta_w.to_vec());
    }
    let coeffs = basis.t_matvec(delta_w)?;
    let along = basis.matvec(&coeffs)?;
    Ok(delta_w.iter().zip(&along).map(|(d, a)| d - a).collect())
}

/// Projection against a basis held as a list of orthonormal vectors.
fn project_columns(delta_w: &mut [f64], basis: &[Vec<f64>]) {
    let coeffs: Vec<f64> = basis.par_iter().map(|b| dot(b, delta_w)).collect();
    for (b, c) in basis.iter().zip(coeffs) {
        axpy(-c, b, delta_w);
    }
}

fn max_abs_coefficient(v: &[f64], basis: &[Vec<f64>]) -> f64 {
    basis.par_iter().map(|b| dot(b, v).powi(2)).sum::<f64>().sqrt()
}

/// Incrementally orthonormalized gradient store.
#[derive(Debug, Clone, Default)]
pub struct GramSchmidtStore {
    basis: Vec<Vec<f64>>,
    stored: usize,
    cap: Option<usize>,
}

impl GramSchmidtStore {
    pub fn new(cap: Option<usize>) -> Self {
        Self { basis: Vec::new(), stored: 0, cap }
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn width(&self) -> usize {
        self.basis.len()
    }

    /// Gradients accepted so far, including ones that added no direction.
    pub fn stored(&self) -> usize {
        self.stored
    }

    pub fn is_full(&self) -> bool {
        self.cap.is_some_and(|c| self.stored >= c)
    }

    /// Modified Gram-Schmidt with one re-orthogonalization pass. Returns
    /// whether `g` was accepted (false only when the cap is reached).
    pub fn absorb(&mut self, g: &[f64]) -> bool {
        if self.is_full() {
            return false;
        }
        self.stored += 1;
        let g_norm = norm(g);
        if g_norm == 0.0 {
            return true;
        }
        let mut r = g.to_vec();
        for _ in 0..2 {
            for q in &self.basis {
                let c = dot(q, &r);
                axpy(-c, q, &mut r);
            }
        }
        let r_norm = norm(&r);
        if r_norm < GS_DROP_TOL * g_norm {
            return true;
        }
        r.iter_mut().for_each(|v| *v /= r_norm);
        self.basis.push(r);
        true
    }
}

pub fn ogd_full_absorb(store: &mut GramSchmidtStore, g: &[f64]) -> bool {
    store.absorb(g)
}

/// Uniform fixed-size subset of a gradient stream (Algorithm R).
#[derive(Debug, Clone, Default)]
pub struct Reservoir {
    items: Vec<Vec<f64>>,
    /// Stream position of each retained item.
    indices: Vec<u64>,
    seen: u64,
    budget: usize,
}

impl Reservoir {
    pub fn new(budget: usize) -> Self {
        Self { items: Vec::with_capacity(budget.min(1 << 12)), indices: Vec::new(), seen: 0, budget }
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn retained_indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, g: &[f64], rng: &mut R) {
        let n = self.seen;
        self.seen += 1;
        if self.budget == 0 {
            return;
        }
        if (n as usize) < self.budget {
            self.items.push(g.to_vec());
            self.indices.push(n);
        } else {
            let j = rng.random_range(0..=n);
            if (j as usize) < self.budget {
                self.items[j as usize] = g.to_vec();
                self.indices[j as usize] = n;
            }
        }
    }
}

pub fn random_ogd_absorb<R: Rng + ?Sized>(store: &mut Reservoir, g: &[f64], rng: &mut R) {
    store.offer(g, rng)
}

/// Top-`c` left singular vectors of `task_gradients` (`p × n`), keeping only
/// directions with nonzero singular value.
pub fn pca_ogd_compress(task_gradients: &DenseMatrix, c: usize) -> Result<DenseMatrix> {
    if c == 0 {
        return Err(ContinualError::InvalidArgument("component count c must be at least 1".into()));
    }
    let p = task_gradients.rows();
    if task_gradients.cols() == 0 || task_gradients.frobenius_norm() == 0.0 {
        return Ok(DenseMatrix::zeros(p, 0));
    }
    let s = svd(task_gradients)?;
    let keep = s.rank(DEFAULT_RANK_TOL).min(c);
    Ok(s.u.column_range(0..keep))
}

/// Cross-task PCA store, capped at `budget` columns.
#[derive(Debug, Clone)]
pub struct PcaStore {
    basis: DenseMatrix,
    budget: usize,
}

impl PcaStore {
    pub fn new(p: usize, budget: usize) -> Self {
        Self { basis: DenseMatrix::zeros(p, 0), budget }
    }

    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn width(&self) -> usize {
        self.basis.cols()
    }

    /// Compresses one task's gradients to `c` components and merges them.
    /// Components from different tasks are re-orthogonalized together.
    pub fn absorb_task(&mut self, task_gradients: &DenseMatrix, c: usize) -> Result<()> {
        let room = self.budget.saturating_sub(self.width());
        if room == 0 || task_gradients.cols() == 0 {
            return Ok(());
        }
        let new = pca_ogd_compress(task_gradients, c.min(room))?;
        if new.cols() == 0 {
            return Ok(());
        }
        let merged = orth(&self.basis.hcat(&new)?, DEFAULT_RANK_TOL)?;
        self.basis = if merged.cols() > self.budget { merged.column_range(0..self.budget) } else { merged };
        Ok(())
    }
}

enum Memory {
    None,
    Full(GramSchmidtStore),
    Random { reservoir: Reservoir, rng: rand_chacha::ChaCha8Rng },
    Pca { store: PcaStore, per_task: usize },
    Sketch(SketchState),
}

impl Memory {
    fn new(config: &LearnerConfig, p: usize, num_tasks: usize) -> Result<Self> {
        Ok(match config.kind {
            LearnerKind::Sgd => Memory::None,
            LearnerKind::OgdFull => Memory::Full(GramSchmidtStore::new(config.ogd_cap)),
            LearnerKind::RandomOgd => Memory::Random {
                reservoir: Reservoir::new(config.memory_budget),
                rng: rng_from_seed(derive_seed(config.seed, tag::RESERVOIR)),
            },
            LearnerKind::PcaOgd => {
                let per_task = config.memory_budget / num_tasks.max(1);
                if per_task == 0 {
                    return Err(ContinualError::InvalidArgument(format!(
                        "memory budget {} is too small for {num_tasks} tasks",
                        config.memory_budget
                    )));
                }
                Memory::Pca { store: PcaStore::new(p, config.memory_budget), per_task }
            }
            LearnerKind::Sketch1 | LearnerKind::Sketch2 | LearnerKind::Sketch3 => {
                let method = config.kind.sketch_method().expect("sketch kind");
                let (k, l) = sketch_dims(method, config.memory_budget)?;
                Memory::Sketch(SketchState::new(method, p, k, l, derive_seed(config.seed, tag::SKETCH_STATE))?)
            }
        })
    }

    fn stored_vectors(&self) -> usize {
        match self {
            Memory::None => 0,
            Memory::Full(store) => store.stored(),
            Memory::Random { reservoir, .. } => reservoir.len(),
            Memory::Pca { store, .. } => store.width(),
            Memory::Sketch(state) => state.stored_vectors(),
        }
    }

    /// Number of gradients to sample for the current task.
    fn sample_count(&self, config: &LearnerConfig, train_len: usize) -> usize {
        let wanted = config.s.min(train_len);
        match self {
            // Sgd keeps nothing, but still samples when the gradients are dumped.
            Memory::None if !config.dump_gradients => 0,
            Memory::Pca { store, .. } if config.pca_mode == PcaMode::MemoryLimited => {
                wanted.min(config.memory_budget.saturating_sub(store.width()))
            }
            Memory::Full(store) => match store.cap {
                Some(cap) => wanted.min(cap.saturating_sub(store.stored())),
                None => wanted,
            },
            _ => wanted,
        }
    }

    fn basis(&self) -> Result<Vec<Vec<f64>>> {
        Ok(match self {
            Memory::None => Vec::new(),
            Memory::Full(store) => store.basis().to_vec(),
            Memory::Random { reservoir, .. } => {
                if reservoir.is_empty() {
                    Vec::new()
                } else {
                    let p = reservoir.items()[0].len();
                    let g = DenseMatrix::from_columns(p, reservoir.items())?;
                    orth(&g, DEFAULT_RANK_TOL)?.columns()
                }
            }
            Memory::Pca { store, .. } => store.basis().columns(),
            Memory::Sketch(state) => state.extract_basis(DEFAULT_RANK_TOL)?.columns(),
        })
    }
}

pub fn train_continual(model: &mut MlpModel, tasks: &TaskSequence, config: &LearnerConfig) -> Result<RunResult> {
    train_continual_observed(model, tasks, config, |_| {})
}

/// [`train_continual`] with a callback for every step and task boundary.
pub fn train_continual_observed<F>(
    model: &mut MlpModel,
    tasks: &TaskSequence,
    config: &LearnerConfig,
    mut observer: F,
) -> Result<RunResult>
where
    F: FnMut(&TrainEvent<'_>),
{
    config.validate()?;
    if tasks.input_dim() != model.input_dim() {
        return Err(ContinualError::InvalidArgument(format!(
            "tasks have input dimension {}, model expects {}",
            tasks.input_dim(),
            model.input_dim()
        )));
    }
    if tasks.max_label() >= model.output_dim() {
        return Err(ContinualError::InvalidArgument(format!(
            "label {} does not fit {} model outputs",
            tasks.max_label(),
            model.output_dim()
        )));
    }
    let start = Instant::now();
    let p = model.p();
    let mut memory = Memory::new(config, p, tasks.len())?;
    let mut batch_rng = rng_from_seed(derive_seed(config.seed, tag::MINIBATCH));
    let mut sample_rng = rng_from_seed(derive_seed(config.seed, tag::MEMORY_SAMPLE));

    let mut checkpoints = Vec::new();
    let mut diag = Diagnostics::default();
    let mut epoch_global = 0;

    for (t, task) in tasks.tasks().iter().enumerate() {
        let basis = if t == 0 { Vec::new() } else { memory.basis()? };
        diag.basis_width.push(basis.len());

        let mut order: Vec<usize> = (0..task.train.len()).collect();
        let mut step = 0;
        for epoch in 0..config.epochs {
            order.shuffle(&mut batch_rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<LabeledExample> = chunk.iter().map(|&i| task.train[i].clone()).collect();
                let (loss, grad) = model.loss_and_gradient(&batch)?;
                let mut delta: Vec<f64> = grad.iter().map(|g| -config.learning_rate * g).collect();
                let delta_norm = norm(&delta);
                project_columns(&mut delta, &basis);
                let residual = if config.log_projection && !basis.is_empty() {
                    let r = max_abs_coefficient(&delta, &basis);
                    if delta_norm > 0.0 {
                        diag.max_projection_ratio = diag.max_projection_ratio.max(r / delta_norm);
                    }
                    Some(r)
                } else {
                    None
                };
                axpy(1.0, &delta, model.weights_mut());
                observer(&TrainEvent::Step { task: t, epoch, step, loss, delta_norm, residual, applied: &delta });
                step += 1;
            }
            epoch_global += 1;
            checkpoints.push(Checkpoint { task: t, epoch, epoch_global, accuracies: evaluate(model, tasks)? });
        }

        let count = memory.sample_count(config, task.train.len());
        let sampled = index::sample(&mut sample_rng, task.train.len(), count).into_vec();
        observer(&TrainEvent::TaskEnd { task: t, model, sampled: &sampled });

        let grads: Vec<Vec<f64>> = sampled
            .par_iter()
            .map(|&i| model.correct_logit_gradient(&task.train[i]))
            .collect::<std::result::Result<_, _>>()?;
        if matches!(&memory, Memory::Pca { .. }) {
            // The raw task matrix is resident alongside the store until compressed.
            let transient = memory.stored_vectors() + grads.len();
            if config.pca_mode == PcaMode::MemoryLimited {
                diag.peak_stored_vectors = diag.peak_stored_vectors.max(transient);
            }
        }
        absorb_all(&mut memory, &grads, p)?;
        diag.peak_stored_vectors = diag.peak_stored_vectors.max(memory.stored_vectors());
        diag.stored_after_task.push(memory.stored_vectors());
        if config.dump_gradients {
            diag.sampled_gradients.extend(grads);
        }
    }

    let last = checkpoints.last().map(|c| c.accuracies.clone()).unwrap_or_default();
    let final_average = if last.is_empty() { 0.0 } else { last.iter().sum::<f64>() / last.len() as f64 };
    Ok(RunResult { checkpoints, final_average, config: config.clone(), wall_time: start.elapsed(), diagnostics: diag })
}

fn absorb_all(memory: &mut Memory, grads: &[Vec<f64>], p: usize) -> Result<()> {
    match memory {
        Memory::None => {}
        Memory::Full(store) => {
            for g in grads {
                store.absorb(g);
            }
        }
        Memory::Random { reservoir, rng } => {
            for g in grads {
                reservoir.offer(g, rng);
            }
        }
        Memory::Pca { store, per_task } => {
            if !grads.is_empty() {
                store.absorb_task(&DenseMatrix::from_columns(p, grads)?, *per_task)?;
            }
        }
        Memory::Sketch(state) => {
            for g in grads {
                state.update(g)?;
            }
        }
    }
    Ok(())
}

/// Test accuracy of `model` on every task, in task order.
pub fn evaluate(model: &MlpModel, tasks: &TaskSequence) -> Result<Vec<f64>> {
    tasks.tasks().par_iter().map(|t| model.accuracy(&t.test).map_err(ContinualError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;

    #[test]
    fn kind_names_round_trip() {
        for k in LearnerKind::ALL {
            assert_eq!(k.name().parse::<LearnerKind>().unwrap(), k);
        }
        assert!("adam".parse::<LearnerKind>().is_err());
    }

    #[test]
    fn budget_translation() {
        assert_eq!(sketch_dims(SketchMethod::Method1, 1200).unwrap(), (1200, None));
        assert_eq!(sketch_dims(SketchMethod::Method2, 1200).unwrap(), (600, None));
        let (k, l) = sketch_dims(SketchMethod::Method3, 1200).unwrap();
        assert_eq!((k, l), (299, Some(301)));
        assert!(2 * (k + l.unwrap()) <= 1200);
        assert!(sketch_dims(SketchMethod::Method1, 1).is_err());
        assert!(sketch_dims(SketchMethod::Method2, 3).is_err());
        assert!(sketch_dims(SketchMethod::Method3, 11).is_err());
        assert_eq!(sketch_dims(SketchMethod::Method3, 12).unwrap(), (2, Some(4)));
    }

    #[test]
    fn projection_cases() {
        let delta = vec![1.0, 2.0, 3.0];
        assert_eq!(project_update(&delta, &DenseMatrix::zeros(3, 0)).unwrap(), delta);
        let b = DenseMatrix::from_columns(3, &[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(project_update(&delta, &b).unwrap(), vec![1.0, 0.0, 3.0]);
        assert_eq!(project_update(&[0.0, 5.0, 0.0], &b).unwrap(), vec![0.0; 3]);
        assert!(project_update(&[1.0], &b).is_err());
    }

    #[test]
    fn gram_schmidt_duplicates_and_cap() {
        let mut s = GramSchmidtStore::new(Some(3));
        assert!(s.absorb(&[1.0, 1.0, 0.0]));
        assert!(s.absorb(&[2.0, 2.0, 0.0]));
        assert_eq!((s.width(), s.stored()), (1, 2));
        assert!(s.absorb(&[0.0, 0.0, 4.0]));
        assert!(!s.absorb(&[1.0, 0.0, 0.0]));
        assert_eq!((s.width(), s.stored()), (2, 3));
    }

    #[test]
    fn reservoir_keeps_short_streams() {
        let mut r = Reservoir::new(5);
        let mut rng = rng_from_seed(1);
        for i in 0..4 {
            r.offer(&[i as f64], &mut rng);
        }
        assert_eq!(r.retained_indices(), &[0, 1, 2, 3]);
        let mut empty = Reservoir::new(0);
        empty.offer(&[1.0], &mut rng);
        assert!(empty.is_empty());
    }

    #[test]
    fn pca_rank_one_and_full() {
        let u = vec![1.0, 2.0, 2.0, 0.0];
        let g = DenseMatrix::from_columns(4, &[u.clone(), u.iter().map(|v| -3.0 * v).collect()]).unwrap();
        let b = pca_ogd_compress(&g, 3).unwrap();
        assert_eq!(b.cols(), 1);
        let g = gaussian_matrix(10, 4, 3).unwrap();
        let b = pca_ogd_compress(&g, 4).unwrap();
        assert_eq!(b.cols(), 4);
        assert!(b.orthonormality_defect() < 1e-12);
        assert!(pca_ogd_compress(&g, 0).is_err());
    }

    #[test]
    fn pca_store_respects_budget() {
        let mut store = PcaStore::new(20, 5);
        store.absorb_task(&gaussian_matrix(20, 8, 1).unwrap(), 3).unwrap();
        assert_eq!(store.width(), 3);
        store.absorb_task(&gaussian_matrix(20, 8, 2).unwrap(), 3).unwrap();
        assert_eq!(store.width(), 5);
        assert!(store.basis().orthonormality_defect() < 1e-12);
    }
}
