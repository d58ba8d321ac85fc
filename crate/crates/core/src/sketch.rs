//! Streaming gradient sketches and one-shot sketch reconstructions.
//!
//! Three sketching methods are supported:
//!
//! * [`SketchMethod::Method1`] sketches the gradient matrix `G` itself:
//!   `Y = G Ω` with a fresh Gaussian row `ω` drawn for each absorbed gradient.
//! * [`SketchMethod::Method2`] sketches `G Gᵀ`: `Y = G Gᵀ Ω` for a fixed `Ω`.
//! * [`SketchMethod::Method3`] adds the co-range sketch `W = Ψ G Gᵀ` and
//!   extracts the basis from the symmetric reconstruction.
//!
//! Random matrices are derived from the state seed: `Ω` uses
//! `derive_seed(seed, SKETCH_OMEGA)`, `Ψ` uses `derive_seed(seed, SKETCH_PSI)`
//! and Method1's per-update rows come from one stream seeded with
//! `derive_seed(seed, SKETCH_OMEGA_STREAM)`, `k` normals per update. The
//! stacked rows after `n` updates therefore equal
//! `gaussian_matrix(n, k, derive_seed(seed, SKETCH_OMEGA_STREAM))`.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{self, axpy, dot, gaussian_matrix, orth, qr, triangular_pinv_apply, DenseMatrix, LinalgError};
use crate::rng::{derive_seed, rng_from_seed, tag};

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SketchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchMethod {
    Method1,
    Method2,
    Method3,
}

impl SketchMethod {
    pub const ALL: [SketchMethod; 3] = [SketchMethod::Method1, SketchMethod::Method2, SketchMethod::Method3];

    pub fn tag(self) -> u8 {
        match self {
            SketchMethod::Method1 => 1,
            SketchMethod::Method2 => 2,
            SketchMethod::Method3 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(SketchMethod::Method1),
            2 => Some(SketchMethod::Method2),
            3 => Some(SketchMethod::Method3),
            _ => None,
        }
    }

    /// Persistent storage in units of p-vectors for sketch widths `k` and `l`.
    pub fn footprint_vectors(self, k: usize, l: usize) -> usize {
        match self {
            SketchMethod::Method1 => k,
            SketchMethod::Method2 => 2 * k,
            SketchMethod::Method3 => 2 * (l + k),
        }
    }
}

impl std::fmt::Display for SketchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// Fixed-size streaming sketch of the gradients seen so far.
#[derive(Debug, Clone)]
pub struct SketchState {
    method: SketchMethod,
    p: usize,
    k: usize,
    l: Option<usize>,
    y: DenseMatrix,
    omega: Option<DenseMatrix>,
    psi: Option<DenseMatrix>,
    w: Option<DenseMatrix>,
    n_seen: u64,
    seed: u64,
    omega_stream: ChaCha8Rng,
}

impl SketchState {
    /// Zeroed sketch; `Ω` and `Ψ` are drawn up front for Methods 2 and 3.
    pub fn new(method: SketchMethod, p: usize, k: usize, l: Option<usize>, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(SketchError::InvalidArgument("parameter count p must be at least 1".into()));
        }
        if k < 2 {
            return Err(SketchError::InvalidArgument(format!("sketch width k must be at least 2, got {k}")));
        }
        if k > p {
            return Err(SketchError::InvalidArgument(format!("sketch width k = {k} exceeds p = {p}")));
        }
        let l = match method {
            SketchMethod::Method3 => {
                let l = l.ok_or_else(|| SketchError::InvalidArgument("Method3 needs a co-sketch width l".into()))?;
                if l < k {
                    return Err(SketchError::InvalidArgument(format!("co-sketch width l = {l} is below k = {k}")));
                }
                Some(l)
            }
            _ => None,
        };
        let omega = match method {
            SketchMethod::Method1 => None,
            _ => Some(gaussian_matrix(p, k, derive_seed(seed, tag::SKETCH_OMEGA))?),
        };
        let (psi, w) = match l {
            Some(l) => (
                Some(gaussian_matrix(l, p, derive_seed(seed, tag::SKETCH_PSI))?),
                Some(DenseMatrix::zeros(l, p)),
            ),
            None => (None, None),
        };
        Ok(Self {
            method,
            p,
            k,
            l,
            y: DenseMatrix::zeros(p, k),
            omega,
            psi,
            w,
            n_seen: 0,
            seed,
            omega_stream: rng_from_seed(Self::omega_stream_seed(seed)),
        })
    }

    /// Seed of Method1's per-update `ω` stream.
    pub fn omega_stream_seed(seed: u64) -> u64 {
        derive_seed(seed, tag::SKETCH_OMEGA_STREAM)
    }

    pub fn method(&self) -> SketchMethod {
        self.method
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn l(&self) -> Option<usize> {
        self.l
    }
    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }
    pub fn omega(&self) -> Option<&DenseMatrix> {
        self.omega.as_ref()
    }
    pub fn psi(&self) -> Option<&DenseMatrix> {
        self.psi.as_ref()
    }
    pub fn w(&self) -> Option<&DenseMatrix> {
        self.w.as_ref()
    }
    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of stored reals: `pk`, `2pk` or `2p(l+k)`.
    pub fn footprint(&self) -> usize {
        [Some(&self.y), self.omega.as_ref(), self.psi.as_ref(), self.w.as_ref()]
            .into_iter()
            .flatten()
            .map(|m| m.data().len())
            .sum()
    }

    /// Footprint in units of p-vectors.
    pub fn stored_vectors(&self) -> usize {
        self.footprint() / self.p
    }

    /// Absorbs one gradient in `O(pk)` (Methods 1, 2) or `O(p(k + l))` (Method 3).
    pub fn update(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.p {
            return Err(SketchError::InvalidArgument(format!(
                "gradient length {} does not match p = {}",
                g.len(),
                self.p
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(SketchError::InvalidArgument(format!("gradient entry {i} is not finite")));
        }
        let coeff: Vec<f64> = match &self.omega {
            None => (0..self.k).map(|_| StandardNormal.sample(&mut self.omega_stream)).collect(),
            // gᵀΩ
            Some(omega) => omega.t_matvec(g)?,
        };
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                axpy(gi, &coeff, self.y.row_mut(i));
            }
        }
        if let (Some(psi), Some(w)) = (&self.psi, &mut self.w) {
            for r in 0..psi.rows() {
                let c = dot(psi.row(r), g);
                if c != 0.0 {
                    axpy(c, g, w.row_mut(r));
                }
            }
        }
        self.n_seen += 1;
        Ok(())
    }

    /// Orthonormal basis approximating the range of the absorbed gradients.
    pub fn extract_basis(&self, tol: f64) -> Result<DenseMatrix> {
        if self.n_seen == 0 {
            return Ok(DenseMatrix::zeros(self.p, 0));
        }
        let q = orth(&self.y, tol)?;
        match self.method {
            SketchMethod::Method1 | SketchMethod::Method2 => Ok(q),
            SketchMethod::Method3 => {
                let psi = self.psi.as_ref().expect("Method3 has psi");
                let w = self.w.as_ref().expect("Method3 has w");
                if q.cols() == 0 {
                    return Ok(q);
                }
                let x = corange_factor(&q, psi, w)?;
                Ok(orth(&q.hcat(&x.transpose())?, tol)?)
            }
        }
    }

    /// Writes the binary checkpoint.
    ///
    /// Layout (little-endian): magic `SOGDSK01`, method tag `u8`, then `u64`
    /// fields p, k, l (0 when absent), n_seen, seed, followed by the row-major
    /// `f64` data of y, omega (Methods 2, 3), psi and w (Method 3).
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&[self.method.tag()])?;
        for v in [self.p as u64, self.k as u64, self.l.unwrap_or(0) as u64, self.n_seen, self.seed] {
            out.write_all(&v.to_le_bytes())?;
        }
        for m in [Some(&self.y), self.omega.as_ref(), self.psi.as_ref(), self.w.as_ref()].into_iter().flatten() {
            for v in m.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Restores a checkpoint. Method1's `ω` stream is fast-forwarded by
    /// replaying `n_seen · k` draws so later updates continue the sequence.
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(SketchError::Checkpoint("bad magic".into()));
        }
        let mut tag_byte = [0u8; 1];
        input.read_exact(&mut tag_byte)?;
        let method = SketchMethod::from_tag(tag_byte[0])
            .ok_or_else(|| SketchError::Checkpoint(format!("unknown method tag {}", tag_byte[0])))?;
        let mut header = [0u64; 5];
        for h in header.iter_mut() {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            *h = u64::from_le_bytes(b);
        }
        let [p, k, l, n_seen, seed] = header;
        let (p, k) = (p as usize, k as usize);
        let l = if method == SketchMethod::Method3 { Some(l as usize) } else { None };
        let mut state = SketchState::new(method, p, k, l, seed)?;
        let mut read_into = |m: &mut DenseMatrix| -> Result<()> {
            for v in m.data_mut() {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
                if !v.is_finite() {
                    return Err(SketchError::Checkpoint("non-finite value".into()));
                }
            }
            Ok(())
        };
        read_into(&mut state.y)?;
        if let Some(m) = state.omega.as_mut() {
            read_into(m)?;
        }
        if let Some(m) = state.psi.as_mut() {
            read_into(m)?;
        }
        if let Some(m) = state.w.as_mut() {
            read_into(m)?;
        }
        state.n_seen = n_seen;
        if method == SketchMethod::Method1 {
            for _ in 0..n_seen * k as u64 {
                let _: f64 = StandardNormal.sample(&mut state.omega_stream);
            }
        }
        Ok(state)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SOGDSK01";

pub fn init_sketch(method: SketchMethod, p: usize, k: usize, l: Option<usize>, seed: u64) -> Result<SketchState> {
    SketchState::new(method, p, k, l, seed)
}

pub fn update_sketch(state: &mut SketchState, g: &[f64]) -> Result<()> {
    state.update(g)
}

pub fn extract_basis(state: &SketchState, tol: f64) -> Result<DenseMatrix> {
    state.extract_basis(tol)
}

/// `X = (ΨQ)† W`, computed as `T†(Uᵀ W)` from `ΨQ = U T`.
fn corange_factor(q: &DenseMatrix, psi: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    let psi_q = psi.matmul(q)?;
    let (u, t) = qr(&psi_q)?;
    Ok(triangular_pinv_apply(&t, &u.t_matmul(w)?)?)
}

/// One-shot sketch `(Ω, Ψ, Y = AΩ, W = ΨA)` of a matrix `A`.
#[derive(Debug, Clone)]
pub struct FullSketch {
    pub omega: DenseMatrix,
    pub psi: DenseMatrix,
    pub y: DenseMatrix,
    pub w: DenseMatrix,
}

/// Sketches `a` (m×n) with `Ω` (n×k) and `Ψ` (l×m) drawn from the same
/// derived streams as [`SketchState`].
pub fn sketch_full(a: &DenseMatrix, k: usize, l: usize, seed: u64) -> Result<FullSketch> {
    if k == 0 || k > l {
        return Err(SketchError::InvalidArgument(format!("need 1 <= k <= l, got k = {k}, l = {l}")));
    }
    if !a.is_finite() {
        return Err(SketchError::InvalidArgument("sketched matrix has non-finite entries".into()));
    }
    let omega = gaussian_matrix(a.cols(), k, derive_seed(seed, tag::SKETCH_OMEGA))?;
    let psi = gaussian_matrix(l, a.rows(), derive_seed(seed, tag::SKETCH_PSI))?;
    let y = a.matmul(&omega)?;
    let w = psi.matmul(a)?;
    Ok(FullSketch { omega, psi, y, w })
}

impl FullSketch {
    /// `Q = orth(Y)`.
    pub fn range_basis(&self, tol: f64) -> Result<DenseMatrix> {
        Ok(orth(&self.y, tol)?)
    }

    /// `(Q, X)` with `X = (ΨQ)†W`.
    pub fn factors(&self, tol: f64) -> Result<(DenseMatrix, DenseMatrix)> {
        let q = self.range_basis(tol)?;
        if q.cols() == 0 {
            return Ok((q, DenseMatrix::zeros(0, self.w.cols())));
        }
        let x = corange_factor(&q, &self.psi, &self.w)?;
        Ok((q, x))
    }

    /// `orth[Q Xᵀ]`, the basis used for symmetric sketches.
    pub fn symmetric_range_basis(&self, tol: f64) -> Result<DenseMatrix> {
        let (q, x) = self.factors(tol)?;
        if q.cols() == 0 {
            return Ok(q);
        }
        Ok(orth(&q.hcat(&x.transpose())?, tol)?)
    }
}

/// Direct reconstruction `Â = Q (ΨQ)† W`.
pub fn reconstruct_direct(s: &FullSketch) -> Result<DenseMatrix> {
    let (q, x) = s.factors(linalg::DEFAULT_RANK_TOL)?;
    if q.cols() == 0 {
        return Ok(DenseMatrix::zeros(s.y.rows(), s.w.cols()));
    }
    Ok(q.matmul(&x)?)
}

/// Symmetric reconstruction `Â_sym = ½(QX + XᵀQᵀ)`; exactly symmetric.
pub fn reconstruct_symmetric(s: &FullSketch) -> Result<DenseMatrix> {
    if s.y.rows() != s.w.cols() {
        return Err(SketchError::InvalidArgument("symmetric reconstruction needs a square sketched matrix".into()));
    }
    let direct = reconstruct_direct(s)?;
    let n = direct.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (direct.get(i, j) + direct.get(j, i)));
        }
    }
    Ok(out)
}
