//! Scalar functionals and Lagrange multipliers.
//!
//! All entropy-like quantities are returned in units of `k_B` (that is, as
//! `S / k_B`). Averages follow `<A> = Tr(A rho) / Tr(rho)`.
//!
//! The multiplier machinery is written once for an arbitrary spectral entropy
//! `S/k_B = Tr s(rho)` and an arbitrary, possibly state-dependent, energy
//! operator `Hhat`. Its entropy gradient is `X = s'(rho)` and only enters
//! through centered traces or through `X - <X>`, so any constant shift of `X`
//! is immaterial. Von Neumann uses `X = -ln rho` and Tsallis uses
//! `X = -q (rho^(q-1) - 1) / (q - 1)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::operators::{
    average_raw, checked_hermitian, commutator_raw, decompose_hermitian, ensure_same_dim,
    entropy_operator_from, hermitian_part, real_trace, trace_product, CMatrix, DensityMatrix,
    HermitianOperator, SpectralDecomposition, StateOperator, UnitsConfig,
};

/// Relative variance below which an operator is treated as sharp on the
/// current state and its multiplier is set to zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Largest admissible condition number of the multiplier system.
pub const MAX_CONDITION: f64 = 1e12;
/// Tolerance for the orthogonality relations checked by [`entropy_production`].
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Multipliers and policies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    /// Real part of the energy multiplier (1/energy).
    pub zeta: f64,
    pub xi: f64,
    /// One per constraint.
    pub eta: Vec<f64>,
    pub sigma: f64,
    /// Always `1/hbar`.
    pub im_zeta_times_sigma: f64,
    /// Max absolute residual of the linear system after substitution.
    pub residual: f64,
    /// Frobenius norm of the coefficient matrix.
    pub system_norm: f64,
}

impl MultiplierSet {
    /// Residual relative to the coefficient-matrix norm.
    pub fn relative_residual(&self) -> f64 {
        if self.system_norm > 0.0 {
            self.residual / self.system_norm
        } else {
            self.residual
        }
    }
}

pub type SigmaFn = dyn Fn(&CMatrix, &CMatrix) -> f64 + Send + Sync;

/// Dissipative time-scale functional `sigma(rho, H - E)`.
///
/// Callbacks receive the unit-trace density matrix and the centered energy
/// operator, so scale invariance in `rho` and zero-point invariance in `H`
/// hold automatically.
#[derive(Clone)]
pub enum SigmaPolicy {
    Constant(f64),
    Callback(Arc<SigmaFn>),
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::Constant(1.0)
    }
}

impl fmt::Debug for SigmaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaPolicy::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            SigmaPolicy::Callback(_) => f.write_str("Callback(..)"),
        }
    }
}

impl SigmaPolicy {
    pub fn constant(value: f64) -> Result<Self> {
        check_sigma(value)?;
        Ok(SigmaPolicy::Constant(value))
    }

    pub fn callback(f: impl Fn(&CMatrix, &CMatrix) -> f64 + Send + Sync + 'static) -> Self {
        SigmaPolicy::Callback(Arc::new(f))
    }

    /// Evaluates on an arbitrary-trace `rho`; `centered_h` is `H - <H>`.
    pub fn evaluate(&self, rho: &CMatrix, centered_h: &CMatrix) -> Result<f64> {
        let value = match self {
            SigmaPolicy::Constant(v) => *v,
            SigmaPolicy::Callback(f) => f(&rho.unscale(real_trace(rho)), centered_h),
        };
        check_sigma(value)?;
        Ok(value)
    }
}

fn check_sigma(value: f64) -> Result<()> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::InvalidSigma { value });
    }
    Ok(())
}

/// Additional conserved observables `C_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    operators: Vec<HermitianOperator>,
    conserved_averages: Vec<f64>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(operators: Vec<HermitianOperator>, conserved_averages: Vec<f64>) -> Result<Self> {
        ensure_same_dim(operators.len(), conserved_averages.len())?;
        if let Some(first) = operators.first() {
            for op in &operators[1..] {
                ensure_same_dim(first.dim(), op.dim())?;
            }
        }
        Ok(Self {
            operators,
            conserved_averages,
        })
    }

    /// Records the averages of `operators` on `rho` as the conserved values.
    pub fn from_state(operators: Vec<HermitianOperator>, rho: &DensityMatrix) -> Result<Self> {
        let mut averages = Vec::with_capacity(operators.len());
        for op in &operators {
            ensure_same_dim(rho.dim(), op.dim())?;
            averages.push(average_raw(op.matrix(), rho.matrix()));
        }
        Self::new(operators, averages)
    }

    pub fn operators(&self) -> &[HermitianOperator] {
        &self.operators
    }

    pub fn conserved_averages(&self) -> &[f64] {
        &self.conserved_averages
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// Whether every `C_j` commutes with `h` and with every other `C_l`
    /// within `tol` in Frobenius norm.
    pub fn is_invariant(&self, h: &HermitianOperator, tol: f64) -> bool {
        let ops = &self.operators;
        ops.iter().enumerate().all(|(j, cj)| {
            cj.dim() == h.dim()
                && commutator_raw(cj.matrix(), h.matrix()).norm() <= tol
                && ops[j + 1..]
                    .iter()
                    .all(|cl| commutator_raw(cj.matrix(), cl.matrix()).norm() <= tol)
        })
    }
}

// ---------------------------------------------------------------------------
// Entropy models
// ---------------------------------------------------------------------------

/// Entropy of the form `S/k_B = sum_nu s(p_nu)` over the spectrum of `rho`.
pub trait SpectralEntropy: Send + Sync {
    /// `s(p)`, with `s(0) = 0`.
    fn density(&self, p: f64) -> f64;
    /// `s'(p)` for `p > 0`.
    fn derivative(&self, p: f64) -> f64;
}

#[derive(Clone, Default)]
pub enum EntropyModel {
    #[default]
    VonNeumann,
    Tsallis { q: f64 },
    Custom(Arc<dyn SpectralEntropy>),
}

impl fmt::Debug for EntropyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropyModel::VonNeumann => f.write_str("VonNeumann"),
            EntropyModel::Tsallis { q } => f.debug_struct("Tsallis").field("q", q).finish(),
            EntropyModel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl EntropyModel {
    pub fn tsallis(q: f64) -> Result<Self> {
        if !q.is_finite() || q == 1.0 {
            return Err(Error::Domain(format!(
                "Tsallis index must be finite and != 1, got {q}"
            )));
        }
        Ok(EntropyModel::Tsallis { q })
    }

    pub fn custom(entropy: impl SpectralEntropy + 'static) -> Self {
        EntropyModel::Custom(Arc::new(entropy))
    }

    pub fn is_von_neumann(&self) -> bool {
        matches!(self, EntropyModel::VonNeumann)
    }

    /// `S / k_B`.
    pub fn entropy(&self, rho: &DensityMatrix) -> Result<f64> {
        self.entropy_from(&decompose_hermitian(rho.matrix()))
    }

    pub(crate) fn entropy_from(&self, sd: &SpectralDecomposition) -> Result<f64> {
        let support = self.support(sd)?;
        Ok(sd
            .eigenvalues
            .iter()
            .zip(&support)
            .filter(|(_, &on)| on)
            .map(|(&p, _)| self.density(p))
            .sum())
    }

    fn density(&self, p: f64) -> f64 {
        match self {
            EntropyModel::VonNeumann => -p * p.ln(),
            EntropyModel::Tsallis { q } => -p * ((q - 1.0) * p.ln()).exp_m1() / (q - 1.0),
            EntropyModel::Custom(s) => s.density(p),
        }
    }

    /// `s'(p)` up to an additive constant.
    fn gradient_value(&self, p: f64) -> f64 {
        match self {
            EntropyModel::VonNeumann => -p.ln(),
            EntropyModel::Tsallis { q } => -q * ((q - 1.0) * p.ln()).exp_m1() / (q - 1.0),
            EntropyModel::Custom(s) => s.derivative(p),
        }
    }

    /// Support mask with positivity and domain checks.
    fn support(&self, sd: &SpectralDecomposition) -> Result<Vec<bool>> {
        // positivity check shared with the entropy operator
        entropy_operator_from(sd)?;
        let cutoff = sd.support_cutoff();
        let mask: Vec<bool> = sd.eigenvalues.iter().map(|&p| p > cutoff).collect();
        if let EntropyModel::Tsallis { q } = self {
            if *q <= 0.0 && mask.iter().any(|on| !on) {
                return Err(Error::Domain(format!(
                    "Tsallis index q = {q} <= 0 is undefined on a singular state"
                )));
            }
        }
        Ok(mask)
    }

    /// Entropy gradient `X` (zero off the support).
    pub(crate) fn gradient_from(&self, sd: &SpectralDecomposition) -> Result<CMatrix> {
        let support = self.support(sd)?;
        let values: Vec<f64> = sd
            .eigenvalues
            .iter()
            .zip(&support)
            .map(|(&p, &on)| if on { self.gradient_value(p) } else { 0.0 })
            .collect();
        let mut scaled = sd.eigenvectors.clone();
        for (j, v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*v);
        }
        Ok(hermitian_part(&(scaled * sd.eigenvectors.adjoint())))
    }

    /// `(delta S / delta rho) rho` with the unshifted derivative:
    /// `-rho ln rho - rho` for von Neumann, `(rho - q rho^q)/(q - 1)` for Tsallis.
    pub(crate) fn derivative_times_rho(&self, sd: &SpectralDecomposition) -> Result<CMatrix> {
        let support = self.support(sd)?;
        let values: Vec<f64> = sd
            .eigenvalues
            .iter()
            .zip(&support)
            .map(|(&p, &on)| {
                if !on {
                    return 0.0;
                }
                match self {
                    EntropyModel::VonNeumann => -p * p.ln() - p,
                    EntropyModel::Tsallis { q } => (p - q * p.powf(*q)) / (q - 1.0),
                    EntropyModel::Custom(s) => p * s.derivative(p),
                }
            })
            .collect();
        let mut scaled = sd.eigenvectors.clone();
        for (j, v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*v);
        }
        Ok(hermitian_part(&(scaled * sd.eigenvectors.adjoint())))
    }

    /// Entropy gradient `delta S / delta rho`, up to an additive multiple of
    /// the identity.
    pub fn gradient(&self, rho: &DensityMatrix) -> Result<HermitianOperator> {
        Ok(HermitianOperator::from_matrix_unchecked(
            self.gradient_from(&decompose_hermitian(rho.matrix()))?,
        ))
    }
}

// ---------------------------------------------------------------------------
// Energy functionals
// ---------------------------------------------------------------------------

pub type EnergyMap = dyn Fn(&CMatrix) -> CMatrix + Send + Sync;

/// State-dependent energy operator `Hhat(rho)`.
#[derive(Clone)]
pub enum EnergyFunctional {
    Fixed(HermitianOperator),
    /// `H + lambda rho`; conserves `Tr(H rho) + (lambda/2) Tr(rho^2)`.
    Quadratic {
        h: HermitianOperator,
        lambda: f64,
    },
    /// `H + lambda <H> I`; conserves `Tr(H rho)`.
    MeanField {
        h: HermitianOperator,
        lambda: f64,
    },
    Custom(Arc<EnergyMap>),
}

impl fmt::Debug for EnergyFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyFunctional::Fixed(h) => f.debug_tuple("Fixed").field(h).finish(),
            EnergyFunctional::Quadratic { lambda, .. } => {
                f.debug_struct("Quadratic").field("lambda", lambda).finish()
            }
            EnergyFunctional::MeanField { lambda, .. } => {
                f.debug_struct("MeanField").field("lambda", lambda).finish()
            }
            EnergyFunctional::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl EnergyFunctional {
    pub fn custom(f: impl Fn(&CMatrix) -> CMatrix + Send + Sync + 'static) -> Self {
        EnergyFunctional::Custom(Arc::new(f))
    }

    /// Evaluates `Hhat(rho)`, rejecting non-Hermitian output.
    pub fn evaluate(&self, rho: &CMatrix) -> Result<HermitianOperator> {
        let m = match self {
            EnergyFunctional::Fixed(h) => return Ok(h.clone()),
            EnergyFunctional::Quadratic { h, lambda } => h.matrix() + rho.scale(*lambda),
            EnergyFunctional::MeanField { h, lambda } => {
                let e = average_raw(h.matrix(), rho);
                h.matrix() + CMatrix::identity(rho.nrows(), rho.nrows()).scale(lambda * e)
            }
            EnergyFunctional::Custom(f) => f(rho),
        };
        ensure_same_dim(rho.nrows(), m.nrows())?;
        HermitianOperator::new(m)
    }

    /// Value of the functional conserved by the dynamics, when known.
    pub fn conserved_value(&self, rho: &CMatrix) -> Option<f64> {
        match self {
            EnergyFunctional::Fixed(h) | EnergyFunctional::MeanField { h, .. } => {
                Some(trace_product(h.matrix(), rho).re)
            }
            EnergyFunctional::Quadratic { h, lambda } => {
                Some(trace_product(h.matrix(), rho).re + 0.5 * lambda * trace_product(rho, rho).re)
            }
            EnergyFunctional::Custom(_) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Generic multiplier engine
// ---------------------------------------------------------------------------

/// Everything the equations of motion need at one state.
#[derive(Debug, Clone)]
pub(crate) struct Generator {
    pub rho: CMatrix,
    pub sd: SpectralDecomposition,
    /// Entropy gradient `X`.
    pub x: CMatrix,
    /// `<X>`.
    pub mean_x: f64,
    pub h_hat: CMatrix,
    /// `Hhat - <Hhat>` followed by `C_j - <C_j>`.
    pub centered: Vec<CMatrix>,
    pub constraint_averages: Vec<f64>,
    pub multipliers: MultiplierSet,
    pub hbar: f64,
}

/// Inputs of [`Generator::build`] that do not change along a trajectory.
pub(crate) struct GeneratorInputs<'a> {
    pub entropy: &'a EntropyModel,
    pub sigma: &'a SigmaPolicy,
    pub constraints: &'a [HermitianOperator],
    /// Spectral ranges of the constraints, if precomputed.
    pub constraint_ranges: Option<&'a [f64]>,
    pub units: &'a UnitsConfig,
}

/// Scale `s` for the sharpness test `Var <= VARIANCE_FLOOR * s^2`: the
/// spectral range, raised to the rounding level of the operator's entries so
/// that a multiple of the identity always counts as sharp.
pub(crate) fn floor_scale(m: &CMatrix, range: f64) -> f64 {
    range.hypot(64.0 * f64::EPSILON * m.camax() / VARIANCE_FLOOR.sqrt())
}

fn range_of(m: &CMatrix) -> f64 {
    let ev = decompose_hermitian(m).eigenvalues;
    ev.last().copied().unwrap_or(0.0) - ev.first().copied().unwrap_or(0.0)
}

impl Generator {
    /// `h_range` is the spectral range of `h_hat` when known.
    pub fn build(
        rho: &CMatrix,
        h_hat: &CMatrix,
        h_range: Option<f64>,
        inputs: &GeneratorInputs<'_>,
    ) -> Result<Self> {
        let d = rho.nrows();
        ensure_same_dim(d, h_hat.nrows())?;
        let tr = real_trace(rho);
        if !(tr > 0.0 && tr.is_finite()) {
            return Err(Error::InvalidArgument(format!("state has trace {tr}")));
        }
        let sd = decompose_hermitian(rho);
        let x = inputs.entropy.gradient_from(&sd)?;
        let mean_x = trace_product(&x, rho).re / tr;
        let energy = average_raw(h_hat, rho);
        let id = CMatrix::identity(d, d);

        let mut centered = Vec::with_capacity(1 + inputs.constraints.len());
        let mut ranges = Vec::with_capacity(1 + inputs.constraints.len());
        centered.push(h_hat - id.scale(energy));
        ranges.push(floor_scale(
            h_hat,
            h_range.unwrap_or_else(|| range_of(h_hat)),
        ));
        let mut constraint_averages = Vec::with_capacity(inputs.constraints.len());
        for (j, cj) in inputs.constraints.iter().enumerate() {
            ensure_same_dim(d, cj.dim())?;
            let avg = average_raw(cj.matrix(), rho);
            constraint_averages.push(avg);
            centered.push(cj.matrix() - id.scale(avg));
            let r = match inputs.constraint_ranges {
                Some(r) => r[j],
                None => range_of(cj.matrix()),
            };
            ranges.push(floor_scale(cj.matrix(), r));
        }

        let sigma = inputs.sigma.evaluate(rho, &centered[0])?;
        let (coeffs, residual, system_norm) =
            solve_system(rho, &x, h_hat, &centered, &ranges, sigma, inputs.units.hbar)?;
        let zeta = coeffs[0];
        let eta = coeffs[1..].to_vec();
        let xi = mean_x
            - 2.0 * zeta * energy
            - 2.0
                * eta
                    .iter()
                    .zip(&constraint_averages)
                    .map(|(e, a)| e * a)
                    .sum::<f64>();
        Ok(Self {
            rho: rho.clone(),
            sd,
            x,
            mean_x,
            h_hat: h_hat.clone(),
            centered,
            constraint_averages,
            multipliers: MultiplierSet {
                zeta,
                xi,
                eta,
                sigma,
                im_zeta_times_sigma: 1.0 / inputs.units.hbar,
                residual,
                system_norm,
            },
            hbar: inputs.units.hbar,
        })
    }

    /// `B = sum_a x_a A_a`.
    fn weighted_constraints(&self) -> CMatrix {
        let m = &self.multipliers;
        let mut b = self.centered[0].scale(m.zeta);
        for (a, eta) in self.centered[1..].iter().zip(&m.eta) {
            b += a.scale(*eta);
        }
        b
    }

    /// Dissipative direction `Y = -X + 2B + <X>` (without the factor `-sigma/2`).
    pub fn dissipative_direction(&self) -> CMatrix {
        let d = self.rho.nrows();
        -&self.x
            + self.weighted_constraints().scale(2.0)
            + CMatrix::identity(d, d).scale(self.mean_x)
    }

    /// Left generator `K` with `d gamma/dt = K gamma`.
    pub fn k_matrix(&self, include_hamiltonian: bool) -> CMatrix {
        let mut k = self
            .dissipative_direction()
            .scale(-0.5 * self.multipliers.sigma);
        if include_hamiltonian {
            k -= self.h_hat.map(|z| crate::operators::I * z / self.hbar);
        }
        k
    }

    /// `d rho/dt = K rho + rho K^dagger`.
    pub fn rho_dot(&self, include_hamiltonian: bool) -> CMatrix {
        let k = self.k_matrix(include_hamiltonian);
        let kr = &k * &self.rho;
        hermitian_part(&(&kr + kr.adjoint()))
    }

    /// `dS/dt / k_B = Tr(X d rho/dt) = sigma Tr(Y^2 rho)` when the commutator
    /// terms vanish; in general `2 Re Tr(X K rho)`.
    pub fn entropy_production(&self) -> f64 {
        let k = self.k_matrix(false);
        2.0 * trace_product(&(&self.x * k), &self.rho).re
    }
}

/// Solves `sum_b M_ab x_b = Re Tr(A_a rho X) - Im Tr([Hhat, A_a] rho)/(hbar sigma)`
/// with `M_ab = 2 Re Tr(A_a A_b rho)`. Returns the solution, the max residual
/// and `|M|_F`.
fn solve_system(
    rho: &CMatrix,
    x: &CMatrix,
    h_hat: &CMatrix,
    centered: &[CMatrix],
    ranges: &[f64],
    sigma: f64,
    hbar: f64,
) -> Result<(Vec<f64>, f64, f64)> {
    let n = centered.len();
    let tr = real_trace(rho);
    let g = rho * x;
    let ar: Vec<CMatrix> = centered.iter().map(|a| a * rho).collect();

    let mut full = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for a in 0..n {
        for b in a..n {
            let v = 2.0 * trace_product(&centered[b], &ar[a]).re;
            full[(a, b)] = v;
            full[(b, a)] = v;
        }
        rhs[a] = trace_product(&centered[a], &g).re;
        if a > 0 {
            let comm = trace_product(&commutator_raw(h_hat, &centered[a]), rho).im;
            if comm.abs() > 0.0 {
                if sigma > 0.0 {
                    rhs[a] -= comm / (hbar * sigma);
                } else if comm.abs() > 1e-14 * tr * ranges[a].max(1.0) {
                    return Err(Error::InvalidSigma { value: sigma });
                }
            }
        }
    }

    let active: Vec<usize> = (0..n)
        .filter(|&a| 0.5 * full[(a, a)] / tr > VARIANCE_FLOOR * ranges[a] * ranges[a])
        .collect();
    let mut coeffs = vec![0.0; n];
    if !active.is_empty() {
        let k = active.len();
        let sub = DMatrix::from_fn(k, k, |i, j| full[(active[i], active[j])]);
        let sub_rhs = DVector::from_fn(k, |i, _| rhs[active[i]]);
        // scale to unit diagonal so the conditioning test is unit-free
        let scale: Vec<f64> = (0..k).map(|i| sub[(i, i)].sqrt()).collect();
        let corr = DMatrix::from_fn(k, k, |i, j| sub[(i, j)] / (scale[i] * scale[j]));
        for m in 1..=k {
            let lead = corr.view((0, 0), (m, m)).clone_owned();
            let ev = SymmetricEigen::new(lead).eigenvalues;
            let lo = ev.min();
            let hi = ev.max();
            let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            if condition > MAX_CONDITION {
                let idx = active[m - 1];
                return Err(Error::DegenerateConstraints {
                    operator: operator_name(idx),
                    condition,
                });
            }
        }
        let scaled_rhs = DVector::from_fn(k, |i, _| sub_rhs[i] / scale[i]);
        let y = corr
            .cholesky()
            .ok_or_else(|| Error::DegenerateConstraints {
                operator: operator_name(active[k - 1]),
                condition: f64::INFINITY,
            })?
            .solve(&scaled_rhs);
        for (i, &a) in active.iter().enumerate() {
            coeffs[a] = y[i] / scale[i];
        }
    }

    let sol = DVector::from_vec(coeffs.clone());
    let residual = (&full * &sol - &rhs).amax();
    Ok((coeffs, residual, full.norm()))
}

fn operator_name(idx: usize) -> String {
    if idx == 0 {
        "hamiltonian".to_string()
    } else {
        format!("constraint[{idx}]")
    }
}

fn simple_inputs<'a>(
    entropy: &'a EntropyModel,
    sigma: &'a SigmaPolicy,
    constraints: &'a [HermitianOperator],
    units: &'a UnitsConfig,
) -> GeneratorInputs<'a> {
    GeneratorInputs {
        entropy,
        sigma,
        constraints,
        constraint_ranges: None,
        units,
    }
}

// ---------------------------------------------------------------------------
// Public scalar functionals
// ---------------------------------------------------------------------------

/// `S / k_B = -Tr(rho ln rho)`.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    EntropyModel::VonNeumann.entropy(rho)
}

/// `Tr(H^2 rho)/Tr(rho) - E^2`, evaluated as the centered second moment.
pub fn energy_variance(rho: &DensityMatrix, h: &HermitianOperator) -> Result<f64> {
    ensure_same_dim(h.dim(), rho.dim())?;
    let e = average_raw(h.matrix(), rho.matrix());
    let centered = h.shifted(-e);
    let c2 = centered.matrix() * centered.matrix();
    Ok(average_raw(&c2, rho.matrix()))
}

/// `1/2 <(H - E) X> / <(H - E)^2>` for the entropy gradient `X` of `entropy`,
/// zero below the variance floor.
fn centered_zeta(
    rho: &DensityMatrix,
    h: &HermitianOperator,
    entropy: &EntropyModel,
) -> Result<f64> {
    ensure_same_dim(h.dim(), rho.dim())?;
    let sd = decompose_hermitian(rho.matrix());
    let x = entropy.gradient_from(&sd)?;
    let range = floor_scale(h.matrix(), h.spectral_range());
    let var = energy_variance(rho, h)?;
    if var <= VARIANCE_FLOOR * range * range {
        return Ok(0.0);
    }
    let e = average_raw(h.matrix(), rho.matrix());
    let centered = h.shifted(-e);
    let num = trace_product(&(centered.matrix() * rho.matrix()), &x).re / rho.trace();
    Ok(0.5 * num / var)
}

/// `zeta = -(1/2) Tr[(H - E) rho ln rho] / Tr[(H - E)^2 rho]`.
pub fn zeta(rho: &DensityMatrix, h: &HermitianOperator) -> Result<f64> {
    centered_zeta(rho, h, &EntropyModel::VonNeumann)
}

/// `xi = S/(k_B Tr rho) - 2 zeta E`.
pub fn xi(rho: &DensityMatrix, h: &HermitianOperator, zeta: f64) -> Result<f64> {
    ensure_same_dim(h.dim(), rho.dim())?;
    let s = von_neumann_entropy(rho)?;
    Ok(s / rho.trace() - 2.0 * zeta * average_raw(h.matrix(), rho.matrix()))
}

/// Entropy production `sigma (theta|theta)` of the von Neumann dynamics, with
/// `theta = ln(rho) gamma + 2 zeta H gamma + 2 sum_j eta_j C_j gamma + xi gamma`.
///
/// The relations `(gamma|theta) = 0` and `Re (gamma|H|theta) = 0` are checked;
/// a violation means the multipliers do not belong to `gamma`.
pub fn entropy_production(
    gamma: &StateOperator,
    h: &HermitianOperator,
    constraints: &ConstraintSet,
    multipliers: &MultiplierSet,
) -> Result<f64> {
    ensure_same_dim(h.dim(), gamma.dim())?;
    ensure_same_dim(constraints.len(), multipliers.eta.len())?;
    let g = gamma.matrix();
    let rho = gamma.density();
    let sd = decompose_hermitian(rho.matrix());
    let cutoff = sd.support_cutoff();
    let log_rho = sd.map(|p| if p > cutoff { p.ln() } else { 0.0 });
    let mut op = log_rho + h.matrix().scale(2.0 * multipliers.zeta);
    for (cj, eta) in constraints.operators().iter().zip(&multipliers.eta) {
        ensure_same_dim(h.dim(), cj.dim())?;
        op += cj.matrix().scale(2.0 * eta);
    }
    op += CMatrix::identity(h.dim(), h.dim()).scale(multipliers.xi);
    let theta = &op * g;

    let scale = 1.0 + theta.norm() * g.norm();
    let gamma_theta = crate::operators::hs_inner_raw(g, &theta)?.re;
    let h_theta = crate::operators::hs_inner_raw(&(h.matrix() * g), &theta)?.re;
    let h_scale = 1.0 + theta.norm() * (h.matrix() * g).norm();
    if gamma_theta.abs() > ORTHOGONALITY_TOL * scale || h_theta.abs() > ORTHOGONALITY_TOL * h_scale
    {
        return Err(Error::Orthogonality {
            gamma_theta,
            h_theta,
        });
    }
    Ok(multipliers.sigma * theta.norm_squared())
}

/// Multipliers of the von Neumann dynamics with constraints at fixed `sigma`.
pub fn lagrange_solve(
    rho: &DensityMatrix,
    h: &HermitianOperator,
    constraints: &ConstraintSet,
    sigma: f64,
    units: &UnitsConfig,
) -> Result<MultiplierSet> {
    let policy = SigmaPolicy::constant(sigma)?;
    let entropy = EntropyModel::VonNeumann;
    let inputs = simple_inputs(&entropy, &policy, constraints.operators(), units);
    Ok(Generator::build(rho.matrix(), h.matrix(), None, &inputs)?.multipliers)
}

/// Tsallis entropy `S_q / k_B = Tr(rho - rho^q) / (q - 1)`, with `0^q = 0`.
pub fn tsallis_entropy(rho: &DensityMatrix, q: f64) -> Result<f64> {
    EntropyModel::tsallis(q)?.entropy(rho)
}

/// `zeta_q = -(1/2) (q/(q-1)) Tr[(H - E) rho^q] / Tr[(H - E)^2 rho]`.
pub fn tsallis_zeta(rho: &DensityMatrix, h: &HermitianOperator, q: f64) -> Result<f64> {
    centered_zeta(rho, h, &EntropyModel::tsallis(q)?)
}

/// Multipliers for a state-dependent energy `Hhat(rho)` and an arbitrary
/// entropy model, with `zeta = (1/2) <(Hhat - <Hhat>) X> / <(Hhat - <Hhat>)^2>`.
pub fn generalized_multipliers(
    rho: &DensityMatrix,
    h_hat: &EnergyFunctional,
    entropy: &EntropyModel,
    sigma: &SigmaPolicy,
    units: &UnitsConfig,
) -> Result<MultiplierSet> {
    let hh = h_hat.evaluate(rho.matrix())?;
    let inputs = simple_inputs(entropy, sigma, &[], units);
    Ok(Generator::build(rho.matrix(), hh.matrix(), None, &inputs)?.multipliers)
}

/// Checks that a raw matrix is Hermitian, as required of functional outputs.
pub fn ensure_hermitian(m: &CMatrix) -> Result<HermitianOperator> {
    Ok(HermitianOperator::from_matrix_unchecked(checked_hermitian(
        m,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{c, diag_real, identity};
    use crate::random::{random_hermitian, random_mixed};
    use approx::assert_abs_diff_eq;

    fn diag(p: &[f64]) -> DensityMatrix {
        DensityMatrix::from_real_diagonal(p).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(
            von_neumann_entropy(&DensityMatrix::maximally_mixed(2)).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        let pure = DensityMatrix::pure(&[c(0.6), c(0.8)]).unwrap();
        assert!(von_neumann_entropy(&pure).unwrap().abs() < 1e-14);
        let s = von_neumann_entropy(&diag(&[0.75, 0.25])).unwrap();
        assert_abs_diff_eq!(
            s,
            -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln()),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(s, 0.5623, epsilon = 1e-4);
    }

    #[test]
    fn variance_examples() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        assert_abs_diff_eq!(
            energy_variance(&diag(&[0.75, 0.25]), &h).unwrap(),
            0.1875,
            epsilon = 1e-15
        );
        let flat = HermitianOperator::identity(2).shifted(2.0);
        assert_abs_diff_eq!(energy_variance(&diag(&[0.3, 0.7]), &flat).unwrap(), 0.0);
        assert_abs_diff_eq!(energy_variance(&diag(&[0.0, 1.0]), &h).unwrap(), 0.0);
    }

    #[test]
    fn zeta_examples() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        let pure = DensityMatrix::pure(&[c(0.6), c(0.8)]).unwrap();
        assert_eq!(zeta(&pure, &h).unwrap(), 0.0);
        assert_abs_diff_eq!(
            zeta(&diag(&[0.75, 0.25]), &h).unwrap(),
            3f64.ln() / 2.0,
            epsilon = 1e-14
        );

        // independent route: direct traces
        let rho = diag(&[0.75, 0.25]);
        let e = 0.25;
        let num = (0.0 - e) * 0.75 * 0.75f64.ln() + (1.0 - e) * 0.25 * 0.25f64.ln();
        let den = e * e * 0.75 + (1.0 - e) * (1.0 - e) * 0.25;
        assert_abs_diff_eq!(zeta(&rho, &h).unwrap(), -0.5 * num / den, epsilon = 1e-15);

        // uniform state: zero by symmetry
        assert!(zeta(&DensityMatrix::maximally_mixed(2), &h).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zeta_invariances() {
        let h = random_hermitian(4, 7);
        let rho = random_mixed(4, 4, 3).unwrap();
        let z = zeta(&rho, &h).unwrap();
        let scaled = DensityMatrix::new(rho.matrix().scale(3.7))
            .unwrap()
            .normalized();
        assert_abs_diff_eq!(zeta(&scaled, &h).unwrap(), z, epsilon = 1e-10);
        assert_abs_diff_eq!(zeta(&rho, &h.shifted(12.5)).unwrap(), z, epsilon = 1e-10);
    }

    #[test]
    fn xi_examples() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        let pure = DensityMatrix::pure(&[c(1.0), c(0.0)]).unwrap();
        assert!(xi(&pure, &h, 0.0).unwrap().abs() < 1e-14);
        let u = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(
            xi(&u, &h, zeta(&u, &h).unwrap()).unwrap(),
            2f64.ln(),
            epsilon = 1e-14
        );
        let g = diag(&[0.75, 0.25]);
        let x = xi(&g, &h, zeta(&g, &h).unwrap()).unwrap();
        let expect = von_neumann_entropy(&g).unwrap() - 3f64.ln() * 0.25;
        assert_abs_diff_eq!(x, expect, epsilon = 1e-14);
        assert_abs_diff_eq!(x, 0.2877, epsilon = 1e-4);
    }

    #[test]
    fn lagrange_examples() {
        let units = UnitsConfig::default();
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 2.5]);
        let rho = random_mixed(3, 3, 11).unwrap();
        let m = lagrange_solve(&rho, &h, &ConstraintSet::empty(), 1.0, &units).unwrap();
        assert_abs_diff_eq!(m.zeta, zeta(&rho, &h).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.xi, xi(&rho, &h, m.zeta).unwrap(), epsilon = 1e-12);
        assert!(m.eta.is_empty());
        assert_eq!(m.im_zeta_times_sigma, 1.0);

        let same = ConstraintSet::from_state(vec![h.clone()], &rho).unwrap();
        match lagrange_solve(&rho, &h, &same, 1.0, &units) {
            Err(Error::DegenerateConstraints { operator, .. }) => {
                assert_eq!(operator, "constraint[1]")
            }
            other => panic!("unexpected {other:?}"),
        }

        let h4 = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 2.0, 3.0]);
        let c1 = HermitianOperator::from_real_diagonal(&[1.0, -1.0, 1.0, -1.0]);
        let rho4 = diag(&[0.4, 0.3, 0.2, 0.1]);
        let cs = ConstraintSet::from_state(vec![c1], &rho4).unwrap();
        assert!(cs.is_invariant(&h4, 1e-10));
        let m = lagrange_solve(&rho4, &h4, &cs, 1.0, &units).unwrap();
        assert!(m.relative_residual() <= 1e-10);
        assert_eq!(m.eta.len(), 1);
    }

    /// Residual oracle written directly from the normal equations with
    /// anticommutators, independent of the engine's `2 Re Tr` shortcut.
    #[test]
    fn lagrange_residual_oracle() {
        let units = UnitsConfig::default();
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 2.0, 3.0]);
        let c1 = HermitianOperator::from_real_diagonal(&[1.0, -1.0, 1.0, -1.0]);
        let rho = diag(&[0.35, 0.3, 0.2, 0.15]);
        let cs = ConstraintSet::from_state(vec![c1.clone()], &rho).unwrap();
        let m = lagrange_solve(&rho, &h, &cs, 1.0, &units).unwrap();
        let r = rho.matrix();
        let rlr = crate::operators::entropy_operator(&rho)
            .unwrap()
            .into_matrix();
        let eh = h.shifted(-average(&h, &rho));
        let ec = c1.shifted(-average(&c1, &rho));
        let anti = |a: &HermitianOperator, b: &HermitianOperator| {
            trace_product(&(a.matrix() * b.matrix() + b.matrix() * a.matrix()), r).re
        };
        let first = trace_product(eh.matrix(), &rlr).re
            + 2.0 * m.zeta * anti(&eh, &eh) / 2.0
            + m.eta[0] * anti(&eh, &ec);
        let second = trace_product(ec.matrix(), &rlr).re
            + m.zeta * anti(&ec, &eh)
            + m.eta[0] * anti(&ec, &ec);
        assert!(first.abs() < 1e-12, "{first}");
        assert!(second.abs() < 1e-12, "{second}");
    }

    fn average(o: &HermitianOperator, rho: &DensityMatrix) -> f64 {
        crate::operators::average(o, rho).unwrap()
    }

    #[test]
    fn sharp_energy_drops_zeta() {
        let units = UnitsConfig::default();
        let h = HermitianOperator::identity(3).shifted(0.5);
        let rho = random_mixed(3, 3, 2).unwrap();
        let m = lagrange_solve(&rho, &h, &ConstraintSet::empty(), 1.0, &units).unwrap();
        assert_eq!(m.zeta, 0.0);
    }

    #[test]
    fn production_examples() {
        let units = UnitsConfig::default();
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        let empty = ConstraintSet::empty();

        let pure = StateOperator::pure(&[c(0.6), c(0.8)]).unwrap();
        let m = lagrange_solve(&pure.density(), &h, &empty, 1.0, &units).unwrap();
        assert!(entropy_production(&pure, &h, &empty, &m).unwrap().abs() < 1e-14);

        let gibbs = diag(&[0.75, 0.25]);
        let m = lagrange_solve(&gibbs, &h, &empty, 1.0, &units).unwrap();
        let p = entropy_production(&gibbs.sqrt_state(), &h, &empty, &m).unwrap();
        assert!(p.abs() < 1e-14, "{p}");

        let h3 = random_hermitian(3, 5);
        let rho = random_mixed(3, 2, 9).unwrap();
        let m = lagrange_solve(&rho, &h3, &empty, 1.0, &units).unwrap();
        let p = entropy_production(&rho.sqrt_state(), &h3, &empty, &m).unwrap();
        assert!(p > 0.0);
    }

    #[test]
    fn production_rejects_foreign_multipliers() {
        let units = UnitsConfig::default();
        let h = random_hermitian(3, 1);
        let empty = ConstraintSet::empty();
        let rho = random_mixed(3, 3, 4).unwrap();
        let mut m = lagrange_solve(&rho, &h, &empty, 1.0, &units).unwrap();
        m.zeta += 0.3;
        assert!(matches!(
            entropy_production(&rho.sqrt_state(), &h, &empty, &m),
            Err(Error::Orthogonality { .. })
        ));
    }

    #[test]
    fn tsallis_examples() {
        let rho = random_mixed(3, 3, 21).unwrap();
        let s = von_neumann_entropy(&rho).unwrap();
        for q in [1.0 - 1e-6, 1.0 + 1e-6] {
            let sq = tsallis_entropy(&rho, q).unwrap();
            assert!(((sq - s) / s).abs() < 1e-5);
        }
        let pure = DensityMatrix::pure(&[c(1.0), c(2.0)]).unwrap();
        assert!(tsallis_entropy(&pure, 2.0).unwrap().abs() < 1e-14);
        assert_abs_diff_eq!(
            tsallis_entropy(&DensityMatrix::maximally_mixed(2), 2.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(matches!(
            tsallis_entropy(&pure, -0.5),
            Err(Error::Domain(_))
        ));
        assert!(EntropyModel::tsallis(1.0).is_err());
    }

    #[test]
    fn tsallis_zeta_matches_closed_form() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 0.7, 2.0]);
        let rho = diag(&[0.5, 0.3, 0.2]);
        let q: f64 = 2.0;
        let e = average(&h, &rho);
        let p = [0.5f64, 0.3, 0.2];
        let en = [0.0, 0.7, 2.0];
        let num: f64 = (0..3).map(|i| (en[i] - e) * p[i].powf(q)).sum();
        let den: f64 = (0..3).map(|i| (en[i] - e).powi(2) * p[i]).sum();
        let expect = -0.5 * q / (q - 1.0) * num / den;
        assert_abs_diff_eq!(tsallis_zeta(&rho, &h, q).unwrap(), expect, epsilon = 1e-14);

        let units = UnitsConfig::default();
        let g = generalized_multipliers(
            &rho,
            &EnergyFunctional::Fixed(h.clone()),
            &EntropyModel::tsallis(q).unwrap(),
            &SigmaPolicy::default(),
            &units,
        )
        .unwrap();
        assert_abs_diff_eq!(g.zeta, expect, epsilon = 1e-12);
    }

    #[test]
    fn generalized_reduces_to_von_neumann() {
        let units = UnitsConfig::default();
        let h = random_hermitian(3, 3);
        let rho = random_mixed(3, 3, 8).unwrap();
        let g = generalized_multipliers(
            &rho,
            &EnergyFunctional::Fixed(h.clone()),
            &EntropyModel::VonNeumann,
            &SigmaPolicy::default(),
            &units,
        )
        .unwrap();
        assert_abs_diff_eq!(g.zeta, zeta(&rho, &h).unwrap(), epsilon = 1e-13);

        let pure = DensityMatrix::pure(&[c(1.0), c(0.5), c(-0.2)]).unwrap();
        let g = generalized_multipliers(
            &pure,
            &EnergyFunctional::Quadratic { h, lambda: 0.4 },
            &EntropyModel::VonNeumann,
            &SigmaPolicy::default(),
            &units,
        )
        .unwrap();
        assert!(g.zeta.abs() < 1e-14);
    }

    #[test]
    fn non_hermitian_energy_rejected() {
        let f = EnergyFunctional::custom(|rho: &CMatrix| {
            let mut m = rho.clone();
            m[(0, 1)] += c(1.0);
            m
        });
        assert!(matches!(
            f.evaluate(&diag_real(&[0.5, 0.5])),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn sigma_policy_validation() {
        assert!(SigmaPolicy::constant(-1.0).is_err());
        let bad = SigmaPolicy::callback(|_, _| f64::NAN);
        assert!(bad.evaluate(&identity(2), &identity(2)).is_err());
        let seen = SigmaPolicy::callback(|rho, _| rho.trace().re);
        assert_abs_diff_eq!(
            seen.evaluate(&identity(2).scale(3.0), &identity(2))
                .unwrap(),
            1.0
        );
    }
}
