//! Reconstruction-error metric and the sketch error bounds.
//!
//! The metric `E_G(B) = ‖(I − BBᵀ)G‖_F²` sums the squared residual of every
//! column of `G` after projecting onto an orthonormal basis `B`. Bounds are
//! expressed through `Σ = Σ_G Σ_Gᵀ` (the squared singular values of `G`,
//! padded with zeros to length p) split at an index `γ` into a head `Σ₁`
//! and a tail `Σ₂`.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{
    self, gaussian_matrix, orth, orthonormal_complement, svd, DenseMatrix, LinalgError, DEFAULT_RANK_TOL,
};
use crate::rng::{derive_seed, tag};
use crate::sketch::{SketchError, SketchMethod, SketchState};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

/// Tolerance on `|BᵀB − I|` accepted by [`reconstruction_error`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Relative singular-value threshold for "Ω₁ has full rank".
pub const FULL_RANK_TOL: f64 = 1e-10;

/// `E_G(B) = Σ_g ‖g − BBᵀg‖²`, computed from the explicit residual.
pub fn reconstruction_error(g_mat: &DenseMatrix, basis: &DenseMatrix) -> Result<f64> {
    if basis.rows() != g_mat.rows() {
        return Err(BoundError::InvalidArgument(format!(
            "basis has {} rows, gradient matrix has {}",
            basis.rows(),
            g_mat.rows()
        )));
    }
    if basis.cols() == 0 {
        return Ok(g_mat.frobenius_norm_sq());
    }
    let defect = basis.orthonormality_defect();
    if defect > ORTHONORMAL_TOL {
        return Err(BoundError::InvalidArgument(format!(
            "basis is not orthonormal (max |BᵀB − I| = {defect:.3e})"
        )));
    }
    let coeff = basis.t_matmul(g_mat)?;
    let residual = g_mat.sub(&basis.matmul(&coeff)?)?;
    Ok(residual.frobenius_norm_sq())
}

/// `GGᵀ = U Σ Uᵀ` split at `gamma`.
#[derive(Debug, Clone)]
pub struct SplitSpectrum {
    pub gamma: usize,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub u1: DenseMatrix,
    pub u2: DenseMatrix,
}

impl SplitSpectrum {
    pub fn diag(&self) -> Vec<f64> {
        self.sigma1.iter().chain(&self.sigma2).copied().collect()
    }
}

/// Eigen-decomposition of `GGᵀ` from the SVD of `G`, with `U` completed to a
/// full p×p orthogonal matrix.
pub fn split_svd(g_mat: &DenseMatrix, gamma: usize) -> Result<SplitSpectrum> {
    let mut all = split_svd_range(g_mat, gamma..gamma + 1)?;
    Ok(all.pop().expect("one split"))
}

/// Splits at every `γ` in `gammas` from a single SVD.
pub fn split_svd_range(g_mat: &DenseMatrix, gammas: std::ops::Range<usize>) -> Result<Vec<SplitSpectrum>> {
    let p = g_mat.rows();
    if gammas.end > p + 1 {
        return Err(BoundError::InvalidArgument(format!("split index {} exceeds p = {p}", gammas.end - 1)));
    }
    let s = svd(g_mat)?;
    let mut diag: Vec<f64> = s.sigma.iter().map(|v| v * v).collect();
    diag.resize(p, 0.0);
    let u_full = if s.u.cols() < p { s.u.hcat(&orthonormal_complement(&s.u)?)? } else { s.u };
    Ok(gammas
        .map(|gamma| SplitSpectrum {
            gamma,
            sigma1: diag[..gamma].to_vec(),
            sigma2: diag[gamma..].to_vec(),
            u1: u_full.column_range(0..gamma),
            u2: u_full.column_range(gamma..p),
        })
        .collect())
}

/// Diagonal of `Σ` (squared singular values of `G`, zero-padded to p rows).
pub fn spectrum_diag(g_mat: &DenseMatrix) -> Result<Vec<f64>> {
    let s = svd(g_mat)?;
    let mut diag: Vec<f64> = s.sigma.iter().map(|v| v * v).collect();
    diag.resize(g_mat.rows(), 0.0);
    Ok(diag)
}

fn check_width(k: usize) -> Result<()> {
    if k < 2 {
        return Err(BoundError::InvalidArgument(format!("sketch width k must be at least 2, got {k}")));
    }
    Ok(())
}

fn tail_sums(diag: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut tail = vec![0.0; n + 1];
    let mut tail_sq = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + diag[i];
        tail_sq[i] = tail_sq[i + 1] + diag[i] * diag[i];
    }
    (tail, tail_sq)
}

/// Method1 expectation bound `min_{γ ≤ k−2} (1 + γ/(k−γ−1)) · Tr Σ₂`.
/// Returns the value and the smallest minimizing `γ`.
pub fn bound_method1(spectrum_diag: &[f64], k: usize) -> Result<(f64, usize)> {
    check_width(k)?;
    let (tail, _) = tail_sums(spectrum_diag);
    let mut best = (f64::INFINITY, 0);
    for gamma in 0..=(k - 2).min(spectrum_diag.len()) {
        let factor = 1.0 + gamma as f64 / (k - gamma - 1) as f64;
        let value = factor * tail[gamma];
        if value < best.0 {
            best = (value, gamma);
        }
    }
    Ok(best)
}

/// Method2 expectation bound
/// `min_{γ ≤ k−2} γ/(k−γ−1) · Tr(Σ₂²) · Tr(Σ₁⁻¹) + Tr(Σ₂)`.
/// Split points whose head contains a zero eigenvalue are skipped.
pub fn bound_method2_expected(spectrum_diag: &[f64], k: usize) -> Result<(f64, usize)> {
    check_width(k)?;
    let (tail, tail_sq) = tail_sums(spectrum_diag);
    let mut best = (f64::INFINITY, 0);
    let mut inv_head = 0.0;
    for gamma in 0..=(k - 2).min(spectrum_diag.len()) {
        if gamma > 0 {
            let last = spectrum_diag[gamma - 1];
            if !(last > 0.0) {
                break;
            }
            inv_head += 1.0 / last;
        }
        let value = method2_term(gamma, k, tail_sq[gamma], inv_head, tail[gamma]);
        if value < best.0 {
            best = (value, gamma);
        }
    }
    Ok(best)
}

/// `γ/(k−γ−1) · Tr(Σ₂²) · Tr(Σ₁⁻¹) + Tr(Σ₂)` for one split.
pub fn method2_term(gamma: usize, k: usize, tr_tail_sq: f64, tr_head_inv: f64, tr_tail: f64) -> f64 {
    if gamma == 0 {
        return tr_tail;
    }
    gamma as f64 / (k - gamma - 1) as f64 * tr_tail_sq * tr_head_inv + tr_tail
}

/// Deterministic Method2 bound `‖Σ₂ Ω₂ Ω₁† Σ₁^{−1/2}‖_F² + Tr Σ₂` for a realized `Ω`
/// (p×k), with `Ω₁ = U₁ᵀΩ`, `Ω₂ = U₂ᵀΩ`.
///
/// Returns 0 when the head contains a zero eigenvalue, i.e. `γ` reaches past
/// the rank of `G`. Fails if `Ω₁` is numerically rank deficient.
pub fn bound_method2_deterministic(split: &SplitSpectrum, omega: &DenseMatrix) -> Result<f64> {
    let gamma = split.gamma;
    let p = split.u1.rows();
    if omega.rows() != p {
        return Err(BoundError::InvalidArgument(format!("Ω has {} rows, expected {p}", omega.rows())));
    }
    let k = omega.cols();
    check_width(k)?;
    if gamma > k - 2 {
        return Err(BoundError::InvalidArgument(format!("split index {gamma} exceeds k − 2 = {}", k - 2)));
    }
    let top = split.sigma1.first().or(split.sigma2.first()).copied().unwrap_or(0.0);
    let rank_floor = top * 1e-20;
    if split.sigma1.iter().any(|&s| s <= rank_floor) {
        return Ok(0.0);
    }
    let tr_tail: f64 = split.sigma2.iter().sum();
    if gamma == 0 {
        return Ok(tr_tail);
    }
    let omega1 = split.u1.t_matmul(omega)?;
    let s1 = svd(&omega1)?;
    // Measured against ‖Ω‖ so that an Ω₁ made of roundoff counts as deficient.
    let scale = s1.sigma[0].max(omega.frobenius_norm());
    let smin = *s1.sigma.last().expect("gamma >= 1");
    if !(smin > FULL_RANK_TOL * scale) {
        return Err(BoundError::Precondition(format!(
            "Ω₁ is rank deficient (σ_min / scale = {:.3e})",
            smin / scale
        )));
    }
    // Ω₁† = V S⁻¹ Uᵀ (k×γ); then scale columns by Σ₁^{−1/2}.
    let mut pinv_t = s1.u.clone(); // γ×γ, columns scaled by 1/σ
    for i in 0..pinv_t.rows() {
        for (v, s) in pinv_t.row_mut(i).iter_mut().zip(&s1.sigma) {
            *v /= s;
        }
    }
    let mut pinv = s1.vt.t_matmul(&pinv_t.transpose())?; // k×γ
    for i in 0..pinv.rows() {
        for (v, s) in pinv.row_mut(i).iter_mut().zip(&split.sigma1) {
            *v /= s.sqrt();
        }
    }
    let omega2 = split.u2.t_matmul(omega)?;
    let mut m = omega2.matmul(&pinv)?;
    for (i, s) in split.sigma2.iter().enumerate() {
        for v in m.row_mut(i) {
            *v *= s;
        }
    }
    Ok(m.frobenius_norm_sq() + tr_tail)
}

/// `Σσᵢ² / σ₁²`.
pub fn stable_rank(singular_values: &[f64]) -> Result<f64> {
    let top = singular_values.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(BoundError::InvalidArgument("stable rank needs a positive singular value".into()));
    }
    Ok(singular_values.iter().map(|s| s * s).sum::<f64>() / (top * top))
}

/// Empirical metric against the matching theoretical bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub method: SketchMethod,
    pub k: usize,
    pub l: usize,
    pub empirical_mean: f64,
    pub empirical_stderr: f64,
    pub bound_value: f64,
    pub optimal_gamma: usize,
    pub trials: usize,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "method,k,l,trials,empirical_mean,empirical_stderr,bound_value,optimal_gamma";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method.tag(),
            self.k,
            self.l,
            self.trials,
            self.empirical_mean,
            self.empirical_stderr,
            self.bound_value,
            self.optimal_gamma
        )
    }

    /// `mean + 3·stderr ≤ bound`.
    pub fn within_bound(&self) -> bool {
        self.empirical_mean + 3.0 * self.empirical_stderr <= self.bound_value
    }
}

/// Seed of Monte Carlo trial `t`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    derive_seed(derive_seed(seed, tag::MONTE_CARLO), t as u64)
}

/// Streams the columns of `g_mat` into a fresh sketch.
pub fn sketch_columns(g_mat: &DenseMatrix, method: SketchMethod, k: usize, l: usize, seed: u64) -> Result<SketchState> {
    let mut state = SketchState::new(method, g_mat.rows(), k, Some(l), seed)?;
    let cols = g_mat.columns();
    for c in &cols {
        state.update(c)?;
    }
    Ok(state)
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `trials` independent streaming sketches of `G` and compares the mean
/// metric of the extracted bases with the expectation bound. Method3 is
/// compared against the Method2 bound, which dominates it draw by draw.
pub fn verify_bound_montecarlo(
    g_mat: &DenseMatrix,
    method: SketchMethod,
    k: usize,
    l: usize,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    if trials < 30 {
        return Err(BoundError::InvalidArgument(format!("expectation checks need at least 30 trials, got {trials}")));
    }
    let diag = spectrum_diag(g_mat)?;
    let (bound_value, optimal_gamma) = match method {
        SketchMethod::Method1 => bound_method1(&diag, k)?,
        SketchMethod::Method2 | SketchMethod::Method3 => bound_method2_expected(&diag, k)?,
    };
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let state = sketch_columns(g_mat, method, k, l, trial_seed(seed, t))?;
            reconstruction_error(g_mat, &state.extract_basis(DEFAULT_RANK_TOL)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (empirical_mean, empirical_stderr) = mean_stderr(&errors);
    Ok(BoundReport { method, k, l, empirical_mean, empirical_stderr, bound_value, optimal_gamma, trials })
}

/// One draw of the deterministic Method2 check.
#[derive(Debug, Clone)]
pub struct DeterministicDraw {
    pub measured: f64,
    /// `(γ, bound)` for every split with full-rank `Ω₁`.
    pub bounds: Vec<(usize, f64)>,
    /// Splits skipped because `Ω₁` failed the full-rank test.
    pub skipped: usize,
}

impl DeterministicDraw {
    pub fn tightest(&self) -> Option<(usize, f64)> {
        self.bounds.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// For each of `trials` seeded Method2 sketches of `G Gᵀ`, measures
/// `E_G(orth Y)` and evaluates the deterministic bound at every split
/// `γ ∈ {0, …, k−2}`.
pub fn deterministic_draws(g_mat: &DenseMatrix, k: usize, trials: usize, seed: u64) -> Result<Vec<DeterministicDraw>> {
    let p = g_mat.rows();
    let splits = split_svd_range(g_mat, 0..k.saturating_sub(2).min(p) + 1)?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let state = sketch_columns(g_mat, SketchMethod::Method2, k, k, trial_seed(seed, t))?;
            let omega = state.omega().expect("Method2 has omega");
            let measured = reconstruction_error(g_mat, &state.extract_basis(DEFAULT_RANK_TOL)?)?;
            let mut bounds = Vec::with_capacity(splits.len());
            let mut skipped = 0;
            for split in &splits {
                match bound_method2_deterministic(split, omega) {
                    Ok(b) => bounds.push((split.gamma, b)),
                    Err(BoundError::Precondition(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(DeterministicDraw { measured, bounds, skipped })
        })
        .collect()
}

/// Paired draws sharing `Ω` and `Ψ`: `(E_G(orth Y), E_G(orth[Q Xᵀ]))`, i.e.
/// the direct basis of Method2 against the symmetric basis of Method3.
pub fn paired_symmetric_draws(g_mat: &DenseMatrix, k: usize, l: usize, trials: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let state = sketch_columns(g_mat, SketchMethod::Method3, k, l, trial_seed(seed, t))?;
            let direct = orth(state.y(), DEFAULT_RANK_TOL)?;
            let e_direct = reconstruction_error(g_mat, &direct)?;
            let e_sym = reconstruction_error(g_mat, &state.extract_basis(DEFAULT_RANK_TOL)?)?;
            Ok((e_direct, e_sym))
        })
        .collect()
}

/// Idealized eigenvalue profiles of `Σ = GGᵀ` used in bound experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum {
    /// `Σ = λ I`.
    Flat { lambda: f64 },
    /// Linear decay from `2λ` to 0, sampled at interval midpoints
    /// `2λ (p − i − ½) / p`, so `Tr Σ = pλ`.
    Linear { lambda: f64 },
    /// `count` eigenvalues equal to `high`, the rest equal to `low`.
    Step { high: f64, low: f64, count: usize },
}

impl Spectrum {
    pub fn name(&self) -> &'static str {
        match self {
            Spectrum::Flat { .. } => "flat",
            Spectrum::Linear { .. } => "linear",
            Spectrum::Step { .. } => "step",
        }
    }

    pub fn eigenvalues(&self, p: usize) -> Vec<f64> {
        match *self {
            Spectrum::Flat { lambda } => vec![lambda; p],
            Spectrum::Linear { lambda } => {
                (0..p).map(|i| 2.0 * lambda * (p as f64 - i as f64 - 0.5) / p as f64).collect()
            }
            Spectrum::Step { high, low, count } => (0..p).map(|i| if i < count { high } else { low }).collect(),
        }
    }
}

/// `G = U diag(√Σ) Vᵀ` (p×n) with Haar-like random orthonormal `U`, `V`.
/// Eigenvalues beyond `min(p, n)` are dropped.
pub fn matrix_with_spectrum(eigenvalues: &[f64], n: usize, seed: u64) -> Result<DenseMatrix> {
    let p = eigenvalues.len();
    let r = p.min(n);
    let u = orth(&gaussian_matrix(p, r, derive_seed(seed, tag::SPECTRUM_BASIS))?, DEFAULT_RANK_TOL)?;
    let v = orth(&gaussian_matrix(n, r, derive_seed(seed, tag::SPECTRUM_BASIS + 1))?, DEFAULT_RANK_TOL)?;
    if u.cols() != r || v.cols() != r {
        return Err(BoundError::InvalidArgument("random basis lost rank".into()));
    }
    let mut us = u;
    for i in 0..p {
        for (x, e) in us.row_mut(i).iter_mut().zip(eigenvalues) {
            *x *= e.max(0.0).sqrt();
        }
    }
    Ok(us.matmul_t(&v)?)
}

/// `‖G‖_F²`.
pub fn total_energy(g_mat: &DenseMatrix) -> f64 {
    g_mat.frobenius_norm_sq()
}

/// Smallest `‖(I − BBᵀ)G‖_F²` over rank-`c` orthonormal `B`: the tail sum of
/// squared singular values (Eckart–Young).
pub fn optimal_rank_error(g_mat: &DenseMatrix, c: usize) -> Result<f64> {
    let s = linalg::svd(g_mat)?;
    Ok(s.sigma.iter().skip(c).map(|v| v * v).sum())
}
