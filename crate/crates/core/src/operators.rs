//! Dense Hermitian operator algebra and spectral calculus.
//!
//! Everything here is a thin layer over `nalgebra` complex matrices. The
//! three value types wrap a [`CMatrix`] and differ only in what they promise:
//! [`HermitianOperator`] is Hermitian, [`DensityMatrix`] is additionally
//! positive semidefinite with positive trace, and [`StateOperator`] is an
//! arbitrary `d x r` matrix `gamma` whose Gram product `gamma gamma^dagger`
//! is a density matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Largest tolerated entrywise asymmetry, relative to `max(1, max |A_ij|)`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues at or below this fraction of the largest one are treated as zero
/// wherever a logarithm or a negative power of the spectrum is taken.
pub const SUPPORT_CUTOFF: f64 = 1e-14;
/// Eigenvalues of a density matrix below `-POSITIVITY_TOL * trace` are errors
/// in the entropy calculus.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Admission tolerance for [`DensityMatrix::new`].
pub const DENSITY_NEG_TOL: f64 = 1e-10;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Physical constants. Natural units by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsConfig {
    pub hbar: f64,
    #[serde(rename = "kB", alias = "kb")]
    pub kb: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        Self { hbar: 1.0, kb: 1.0 }
    }
}

impl UnitsConfig {
    pub fn new(hbar: f64, kb: f64) -> Result<Self> {
        let u = Self { hbar, kb };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar.is_finite() && self.hbar > 0.0 && self.kb.is_finite() && self.kb > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "units must be strictly positive (hbar = {}, kB = {})",
                self.hbar, self.kb
            )));
        }
        Ok(())
    }
}

fn ensure_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub(crate) fn ensure_same_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Max entrywise `|A_ij - conj(A_ji)|`.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// `(A + A^dagger) / 2`.
pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Symmetrizes `m` if it is Hermitian within tolerance, rejects it otherwise.
pub(crate) fn checked_hermitian(m: &CMatrix) -> Result<CMatrix> {
    ensure_square(m)?;
    let asymmetry = hermitian_asymmetry(m);
    if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    if asymmetry > HERMITIAN_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotHermitian { asymmetry });
    }
    Ok(hermitian_part(m))
}

pub(crate) fn real_trace(m: &CMatrix) -> f64 {
    m.trace().re
}

/// `Tr(A B)` without forming the product.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub(crate) fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub(crate) fn diag_real(values: &[f64]) -> CMatrix {
    let d = values.len();
    let mut m = CMatrix::zeros(d, d);
    for (i, v) in values.iter().enumerate() {
        m[(i, i)] = c(*v);
    }
    m
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `A B - B A`.
pub(crate) fn commutator_raw(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `A B + B A`.
pub(crate) fn anticommutator_raw(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

// ---------------------------------------------------------------------------
// Value types
// ---------------------------------------------------------------------------

/// Dense Hermitian operator (Hamiltonian, observable, constraint, projector).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    m: CMatrix,
}

impl HermitianOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        Ok(Self {
            m: checked_hermitian(&m)?,
        })
    }

    pub fn from_real_diagonal(values: &[f64]) -> Self {
        Self {
            m: diag_real(values),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self { m: identity(d) }
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn spectral(&self) -> SpectralDecomposition {
        decompose_hermitian(&self.m)
    }

    /// `max eigenvalue - min eigenvalue`.
    pub fn spectral_range(&self) -> f64 {
        let ev = self.spectral().eigenvalues;
        ev.last().copied().unwrap_or(0.0) - ev.first().copied().unwrap_or(0.0)
    }

    /// `A + c I`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            m: &self.m + identity(self.dim()).scale(shift),
        }
    }

    /// `A (x) I_right + I_left (x) B` for noninteracting subsystems.
    pub fn noninteracting_sum(first: &Self, second: &Self) -> Self {
        let a = kron(&first.m, &identity(second.dim()));
        let b = kron(&identity(first.dim()), &second.m);
        Self { m: a + b }
    }

    /// `U A U^dagger`; `u` must be unitary for the result to be meaningful.
    pub fn conjugated(&self, u: &CMatrix) -> Result<Self> {
        ensure_same_dim(self.dim(), u.nrows())?;
        Ok(Self {
            m: hermitian_part(&(u * &self.m * u.adjoint())),
        })
    }
}

impl AsRef<CMatrix> for HermitianOperator {
    fn as_ref(&self) -> &CMatrix {
        &self.m
    }
}

/// State operator `gamma` with `rho = gamma gamma^dagger`. May be rectangular
/// (`d x r`), in which case `rank(rho) <= r` for every time of an evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StateOperator {
    m: CMatrix,
}

impl StateOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidArgument("empty state operator".into()));
        }
        if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::InvalidArgument(
                "state operator has non-finite entries".into(),
            ));
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    /// Pure state `|psi><psi|` represented by the column `psi / |psi|`.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if psi.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "pure state vector has zero norm".into(),
            ));
        }
        Ok(Self {
            m: CMatrix::from_iterator(psi.len(), 1, psi.iter().map(|z| z / norm)),
        })
    }

    /// Hilbert-space dimension (number of rows).
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    /// `(gamma|gamma) = Tr(gamma^dagger gamma) = Tr(rho)`.
    pub fn norm_sqr(&self) -> f64 {
        self.m.norm_squared()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument(
                "state operator has zero norm".into(),
            ));
        }
        Ok(Self {
            m: self.m.unscale(n.sqrt()),
        })
    }

    pub fn density(&self) -> DensityMatrix {
        density_from_state(self)
    }
}

impl AsRef<CMatrix> for StateOperator {
    fn as_ref(&self) -> &CMatrix {
        &self.m
    }
}

/// Hermitian positive semidefinite operator with positive trace. The trace is
/// reported, never silently renormalized; use [`DensityMatrix::normalized`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let m = checked_hermitian(&m)?;
        let tr = real_trace(&m);
        if !(tr > 0.0 && tr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "density matrix must have positive trace, got {tr}"
            )));
        }
        let ev = decompose_hermitian(&m).eigenvalues;
        if let Some(&lo) = ev.first() {
            if lo < -DENSITY_NEG_TOL * tr {
                return Err(Error::PositivityViolation { eigenvalue: lo });
            }
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        Ok(StateOperator::pure(psi)?.density())
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self {
            m: identity(d).unscale(d as f64),
        }
    }

    pub fn from_real_diagonal(p: &[f64]) -> Result<Self> {
        Self::new(diag_real(p))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn trace(&self) -> f64 {
        real_trace(&self.m)
    }

    pub fn normalized(&self) -> Self {
        Self {
            m: self.m.unscale(self.trace()),
        }
    }

    /// `Tr(rho^2) / Tr(rho)^2`.
    pub fn purity(&self) -> f64 {
        trace_product(&self.m, &self.m).re / self.trace().powi(2)
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        decompose_hermitian(&self.m).eigenvalues
    }

    /// Hermitian square root `rho^{1/2}` as a state operator.
    pub fn sqrt_state(&self) -> StateOperator {
        let sd = decompose_hermitian(&self.m);
        let cutoff = sd.support_cutoff();
        StateOperator::from_matrix_unchecked(sd.map(|p| if p > cutoff { p.sqrt() } else { 0.0 }))
    }

    /// `U rho U^dagger`.
    pub fn conjugated(&self, u: &CMatrix) -> Result<Self> {
        ensure_same_dim(self.dim(), u.nrows())?;
        Ok(Self {
            m: hermitian_part(&(u * &self.m * u.adjoint())),
        })
    }

    /// Trace distance `(1/2) || rho - other ||_1`.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        ensure_same_dim(self.dim(), other.dim())?;
        Ok(trace_distance_raw(&self.m, &other.m))
    }
}

impl AsRef<CMatrix> for DensityMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.m
    }
}

pub(crate) fn trace_distance_raw(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = hermitian_part(&(a - b));
    0.5 * decompose_hermitian(&diff)
        .eigenvalues
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Spectral calculus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `eigenvalues`.
    pub eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(lambda)) V^dagger`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let d = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let w = f(lam);
            for i in 0..d {
                scaled[(i, j)] *= w;
            }
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// `V diag(f(lambda)) V^dagger` for complex-valued `f`.
    pub fn map_complex(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let d = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let w = f(lam);
            for i in 0..d {
                scaled[(i, j)] *= w;
            }
        }
        scaled * self.eigenvectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.map(|x| x)
    }

    /// Cutoff below which eigenvalues count as zero: `SUPPORT_CUTOFF * max`.
    pub fn support_cutoff(&self) -> f64 {
        let top = self.eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
        SUPPORT_CUTOFF * top
    }

    /// Number of eigenvalues strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.eigenvalues.iter().filter(|&&x| x > threshold).count()
    }

    /// Column `j` as an owned vector.
    pub fn eigenvector(&self, j: usize) -> Vec<Complex64> {
        self.eigenvectors.column(j).iter().copied().collect()
    }
}

/// Eigendecomposition of a matrix already known to be Hermitian.
pub(crate) fn decompose_hermitian(m: &CMatrix) -> SpectralDecomposition {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = CMatrix::zeros(d, d);
    for (j, &k) in order.iter().enumerate() {
        eigenvectors.set_column(j, &eig.eigenvectors.column(k));
    }
    SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Spectral decomposition of a Hermitian matrix. Inputs whose asymmetry
/// exceeds the Hermitian tolerance are rejected with the offending norm.
pub fn spectral_decompose(a: &CMatrix) -> Result<SpectralDecomposition> {
    let h = checked_hermitian(a)?;
    Ok(decompose_hermitian(&h))
}

/// `rho = gamma gamma^dagger`.
pub fn density_from_state(gamma: &StateOperator) -> DensityMatrix {
    let g = gamma.matrix();
    DensityMatrix::from_matrix_unchecked(hermitian_part(&(g * g.adjoint())))
}

/// `x ln x` with `0 ln 0 = 0`.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `rho ln rho` on the support of `rho`, from an existing decomposition.
pub(crate) fn entropy_operator_from(sd: &SpectralDecomposition) -> Result<CMatrix> {
    let tr: f64 = sd.eigenvalues.iter().sum();
    if let Some(&lo) = sd.eigenvalues.first() {
        if lo < -POSITIVITY_TOL * tr.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::PositivityViolation { eigenvalue: lo });
        }
    }
    let cutoff = sd.support_cutoff();
    Ok(sd.map(|p| if p > cutoff { xlogx(p) } else { 0.0 }))
}

/// `rho ln rho` for a raw Hermitian matrix, with positivity checking.
pub fn entropy_operator_matrix(rho: &CMatrix) -> Result<CMatrix> {
    let sd = spectral_decompose(rho)?;
    entropy_operator_from(&sd)
}

/// Entropy operator `rho ln rho` (so that `S = -k_B Tr(rho ln rho)`).
pub fn entropy_operator(rho: &DensityMatrix) -> Result<HermitianOperator> {
    let sd = decompose_hermitian(rho.matrix());
    Ok(HermitianOperator::from_matrix_unchecked(
        entropy_operator_from(&sd)?,
    ))
}

/// `[A, B]`. Anti-Hermitian for Hermitian inputs, hence a raw matrix.
pub fn commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<CMatrix> {
    ensure_same_dim(a.dim(), b.dim())?;
    Ok(commutator_raw(a.matrix(), b.matrix()))
}

/// `{A, B}`.
pub fn anticommutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<HermitianOperator> {
    ensure_same_dim(a.dim(), b.dim())?;
    Ok(HermitianOperator::from_matrix_unchecked(hermitian_part(
        &anticommutator_raw(a.matrix(), b.matrix()),
    )))
}

/// Hilbert-Schmidt inner product `(beta|gamma) = Tr(beta^dagger gamma)`.
pub fn hs_inner(beta: &StateOperator, gamma: &StateOperator) -> Result<Complex64> {
    hs_inner_raw(beta.matrix(), gamma.matrix())
}

pub(crate) fn hs_inner_raw(beta: &CMatrix, gamma: &CMatrix) -> Result<Complex64> {
    if beta.shape() != gamma.shape() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            found: gamma.len(),
        });
    }
    Ok(beta
        .iter()
        .zip(gamma.iter())
        .map(|(b, g)| b.conj() * g)
        .sum())
}

/// `<O> = Tr(O rho) / Tr(rho)`.
pub fn average(o: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    ensure_same_dim(o.dim(), rho.dim())?;
    Ok(average_raw(o.matrix(), rho.matrix()))
}

pub(crate) fn average_raw(o: &CMatrix, rho: &CMatrix) -> f64 {
    trace_product(o, rho).re / real_trace(rho)
}

/// `exp(-i H t / hbar)`.
pub fn unitary_propagator(h: &HermitianOperator, t: f64, hbar: f64) -> CMatrix {
    h.spectral()
        .map_complex(|e| Complex64::from_polar(1.0, -e * t / hbar))
}

/// `exp(-i H t / hbar) rho exp(i H t / hbar)`.
pub fn unitary_evolve(
    rho: &DensityMatrix,
    h: &HermitianOperator,
    t: f64,
    hbar: f64,
) -> Result<DensityMatrix> {
    let u = unitary_propagator(h, t, hbar);
    rho.conjugated(&u)
}

/// Fidelity `Tr(rho sigma)` between a pure state and another state, both
/// normalized; equals `<psi|sigma|psi>`.
pub fn pure_fidelity(pure: &DensityMatrix, other: &DensityMatrix) -> Result<f64> {
    ensure_same_dim(pure.dim(), other.dim())?;
    Ok(trace_product(pure.matrix(), other.matrix()).re / (pure.trace() * other.trace()))
}

// ---------------------------------------------------------------------------
// JSON representation: {"dim": d, "entries": [[re, im], ...]} row-major.
// Rectangular state operators add "cols".
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum EntriesRepr {
    Flat(Vec<[f64; 2]>),
    Rows(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    entries: EntriesRepr,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let mut flat = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                flat.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        Self {
            dim: m.nrows(),
            cols: (m.ncols() != m.nrows()).then_some(m.ncols()),
            entries: EntriesRepr::Flat(flat),
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let rows = self.dim;
        let cols = self.cols.unwrap_or(rows);
        let flat: Vec<[f64; 2]> = match &self.entries {
            EntriesRepr::Flat(v) => v.clone(),
            EntriesRepr::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::InvalidArgument(format!(
                        "expected {rows} rows of {cols} entries"
                    )));
                }
                r.iter().flatten().copied().collect()
            }
        };
        if flat.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {rows}x{cols} matrix, found {}",
                rows * cols,
                flat.len()
            )));
        }
        Ok(CMatrix::from_row_iterator(
            rows,
            cols,
            flat.iter().map(|[re, im]| Complex64::new(*re, *im)),
        ))
    }
}

macro_rules! json_matrix_serde {
    ($ty:ty, $ctor:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                MatrixJson::from_matrix(self.matrix()).serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let raw = MatrixJson::deserialize(d)?;
                let m = raw.to_matrix().map_err(serde::de::Error::custom)?;
                $ctor(m).map_err(serde::de::Error::custom)
            }
        }
    };
}

json_matrix_serde!(HermitianOperator, HermitianOperator::new);
json_matrix_serde!(StateOperator, StateOperator::new);
json_matrix_serde!(DensityMatrix, DensityMatrix::new);
