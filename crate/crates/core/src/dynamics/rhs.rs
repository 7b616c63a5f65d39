//! Right-hand sides.
//!
//! `rhs_gamma` is what the integrator uses. The density-matrix forms below are
//! assembled term by term from their closed expressions and do not share the
//! generator code path, so they serve as an independent check on it.

use num_complex::Complex64;

use super::{CompositeMode, ModelSpec};
use crate::error::{Error, Result};
use crate::functionals::{
    floor_scale, lagrange_solve, tsallis_zeta, zeta, EntropyModel, Generator, VARIANCE_FLOOR,
};
use crate::operators::{
    anticommutator_raw, average_raw, commutator_raw, decompose_hermitian, ensure_same_dim,
    entropy_operator_matrix, hermitian_part, real_trace, trace_product, CMatrix, DensityMatrix,
    StateOperator,
};

const NORM_TOL: f64 = 1e-6;

fn ensure_joint(model: &ModelSpec) -> Result<()> {
    match model.composite_mode() {
        CompositeMode::Single | CompositeMode::ThermalContact => Ok(()),
        mode => Err(Error::Unsupported(format!(
            "{mode:?} composites have no joint equation of motion; use the composite evolution"
        ))),
    }
}

/// `(d gamma/dt, generator)` without any normalization check.
pub(crate) fn gamma_rate(
    gamma: &CMatrix,
    model: &ModelSpec,
    include_hamiltonian: bool,
) -> Result<(CMatrix, Generator)> {
    let rho = hermitian_part(&(gamma * gamma.adjoint()));
    let gen = model.generator(&rho)?;
    Ok((gen.k_matrix(include_hamiltonian) * gamma, gen))
}

/// `d gamma/dt = -sigma [ 1/2 ln(rho) gamma + zeta H gamma + sum_j eta_j C_j gamma
/// + xi/2 gamma ] - (i/hbar) H gamma` and its generalizations.
pub fn rhs_gamma(gamma: &StateOperator, model: &ModelSpec) -> Result<CMatrix> {
    ensure_same_dim(model.dim(), gamma.dim())?;
    ensure_joint(model)?;
    let n = gamma.norm_sqr();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "state operator must be normalized, Tr(gamma gamma^dagger) = {n}"
        )));
    }
    Ok(gamma_rate(gamma.matrix(), model, true)?.0)
}

fn hamiltonian_term(rho: &CMatrix, h: &CMatrix, hbar: f64) -> CMatrix {
    commutator_raw(rho, h).scale(1.0 / hbar) * Complex64::new(0.0, 1.0)
}

/// `d rho/dt` of the model, assembled from the closed density-matrix form.
/// Dispatches to [`rhs_tsallis`] or [`rhs_generalized`] when the model calls
/// for it.
pub fn rhs_rho(rho: &DensityMatrix, model: &ModelSpec) -> Result<CMatrix> {
    literal(rho, model, true)
}

/// Interaction-picture right-hand side: the same expression without the
/// commutator term.
pub fn rhs_interaction(rho_bar: &DensityMatrix, model: &ModelSpec) -> Result<CMatrix> {
    literal(rho_bar, model, false)
}

fn literal(rho: &DensityMatrix, model: &ModelSpec, include_hamiltonian: bool) -> Result<CMatrix> {
    ensure_same_dim(model.dim(), rho.dim())?;
    ensure_joint(model)?;
    if model.generalized_energy().is_some()
        || matches!(model.entropy_model(), EntropyModel::Custom(_))
    {
        return generalized(rho, model, include_hamiltonian);
    }
    if let EntropyModel::Tsallis { q } = model.entropy_model() {
        return tsallis(rho, model, *q, include_hamiltonian);
    }
    let r = rho.matrix();
    let h = model.hamiltonian();
    let tr = rho.trace();
    let rlr = entropy_operator_matrix(r)?;
    let e = average_raw(h.matrix(), r);
    let eh = h.shifted(-e).into_matrix();
    let sigma = model.sigma_policy().evaluate(r, &eh)?;

    let mut d = if model.constraints().is_empty() {
        eh.scale(zeta(rho, h)?)
    } else {
        let m = lagrange_solve(rho, h, model.constraints(), sigma, model.units())?;
        let mut d = eh.scale(m.zeta);
        for (c, eta) in model.constraints().operators().iter().zip(&m.eta) {
            d += c.shifted(-average_raw(c.matrix(), r)).matrix().scale(*eta);
        }
        d
    };
    d = anticommutator_raw(&d, r);
    let diss = rlr.clone() + d - r.scale(real_trace(&rlr) / tr);
    let mut out = diss.scale(-sigma);
    if include_hamiltonian {
        out += hamiltonian_term(r, h.matrix(), model.units().hbar);
    }
    Ok(out)
}

/// `-sigma [ q/(q-1) rho^q + zeta_q {H - E, rho} - q/(q-1) Tr(rho^q)/Tr(rho) rho ]
/// + (i/hbar)[rho, H]`.
pub fn rhs_tsallis(rho: &DensityMatrix, model: &ModelSpec) -> Result<CMatrix> {
    ensure_same_dim(model.dim(), rho.dim())?;
    let EntropyModel::Tsallis { q } = model.entropy_model() else {
        return Err(Error::InvalidArgument(
            "model entropy is not Tsallis".into(),
        ));
    };
    tsallis(rho, model, *q, true)
}

fn tsallis(
    rho: &DensityMatrix,
    model: &ModelSpec,
    q: f64,
    include_hamiltonian: bool,
) -> Result<CMatrix> {
    if !model.constraints().is_empty() {
        return Err(Error::Unsupported(
            "the closed Tsallis form has no constraint terms".into(),
        ));
    }
    let r = rho.matrix();
    let h = model.hamiltonian();
    let sd = decompose_hermitian(r);
    let cutoff = sd.support_cutoff();
    if q <= 0.0 && sd.eigenvalues.iter().any(|&p| p <= cutoff) {
        return Err(Error::Domain(format!(
            "rho^q with q = {q} on a singular state"
        )));
    }
    let rq = sd.map(|p| if p > cutoff { p.powf(q) } else { 0.0 });
    let zq = tsallis_zeta(rho, h, q)?;
    let e = average_raw(h.matrix(), r);
    let eh = h.shifted(-e).into_matrix();
    let sigma = model.sigma_policy().evaluate(r, &eh)?;
    let f = q / (q - 1.0);
    let diss = rq.scale(f) + anticommutator_raw(&eh, r).scale(zq)
        - r.scale(f * real_trace(&rq) / rho.trace());
    let mut out = diss.scale(-sigma);
    if include_hamiltonian {
        out += hamiltonian_term(r, h.matrix(), model.units().hbar);
    }
    Ok(out)
}

/// `-sigma [ -(dS/drho) rho + zeta {Hhat - <Hhat>, rho} + <dS/drho> rho ]
/// + (i/hbar)[rho, Hhat(rho)]`.
pub fn rhs_generalized(rho: &DensityMatrix, model: &ModelSpec) -> Result<CMatrix> {
    ensure_same_dim(model.dim(), rho.dim())?;
    generalized(rho, model, true)
}

fn generalized(
    rho: &DensityMatrix,
    model: &ModelSpec,
    include_hamiltonian: bool,
) -> Result<CMatrix> {
    if !model.constraints().is_empty() {
        return Err(Error::Unsupported(
            "the closed generalized form has no constraint terms".into(),
        ));
    }
    let r = rho.matrix();
    let tr = rho.trace();
    let hh = model.energy_operator(r)?;
    let sd = decompose_hermitian(r);
    let g = model.entropy_model().derivative_times_rho(&sd)?;
    let mean_x = real_trace(&g) / tr;
    let e = average_raw(hh.matrix(), r);
    let a = hh.shifted(-e).into_matrix();
    let var = trace_product(&(&a * &a), r).re / tr;
    let range = floor_scale(hh.matrix(), hh.spectral_range());
    let z = if var <= VARIANCE_FLOOR * range * range {
        0.0
    } else {
        0.5 * (trace_product(&a, &g).re / tr) / var
    };
    let sigma = model.sigma_policy().evaluate(r, &a)?;
    let diss = -&g + anticommutator_raw(&a, r).scale(z) + r.scale(mean_x);
    let mut out = diss.scale(-sigma);
    if include_hamiltonian {
        out += hamiltonian_term(r, hh.matrix(), model.units().hbar);
    }
    Ok(out)
}
