use std::cell::Cell;

use serde::{Deserialize, Serialize};

use super::integrator::{integrate, Stop};
use super::rhs::gamma_rate;
use super::{
    CompositeMode, Diagnostics, IntegrationStats, IntegratorConfig, ModelSpec, Trajectory,
    TrajectoryStatus,
};
use crate::error::{Error, Result};
use crate::functionals::Generator;
use crate::operators::{
    average_raw, commutator_raw, ensure_same_dim, hermitian_part, trace_distance_raw,
    unitary_propagator, CMatrix, DensityMatrix, StateOperator,
};

/// Consecutive quiet samples required before a run is declared stationary.
const STATIONARY_SAMPLES: usize = 3;
/// `|d rho/dt|_F` below this multiple of `sigma` counts as quiet.
const STATIONARY_RATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Gamma(StateOperator),
    /// Converted with the Hermitian square root.
    Density(DensityMatrix),
}

impl From<StateOperator> for InitialState {
    fn from(g: StateOperator) -> Self {
        InitialState::Gamma(g)
    }
}

impl From<DensityMatrix> for InitialState {
    fn from(r: DensityMatrix) -> Self {
        InitialState::Density(r)
    }
}

impl From<&StateOperator> for InitialState {
    fn from(g: &StateOperator) -> Self {
        InitialState::Gamma(g.clone())
    }
}

impl From<&DensityMatrix> for InitialState {
    fn from(r: &DensityMatrix) -> Self {
        InitialState::Density(r.clone())
    }
}

impl InitialState {
    pub(crate) fn into_gamma(self) -> Result<StateOperator> {
        match self {
            InitialState::Gamma(g) => g.normalized(),
            InitialState::Density(r) => r.normalized().sqrt_state().normalized(),
        }
    }
}

pub(crate) fn diagnostics(gen: &Generator, model: &ModelSpec) -> Result<Diagnostics> {
    let kb = model.units().kb;
    Ok(Diagnostics {
        trace: gen.sd.eigenvalues.iter().sum(),
        energy: average_raw(model.hamiltonian().matrix(), &gen.rho),
        entropy: kb * model.entropy_model().entropy_from(&gen.sd)?,
        entropy_production: kb * gen.entropy_production(),
        eigenvalues: gen.sd.eigenvalues.clone(),
        zeta: gen.multipliers.zeta,
        constraint_averages: gen.constraint_averages.clone(),
        rate_norm: gen.rho_dot(true).norm(),
        sigma: gen.multipliers.sigma,
    })
}

pub(crate) fn renormalize(g: &mut CMatrix) {
    let n = g.norm();
    if n > 0.0 {
        g.unscale_mut(n);
    }
}

pub(crate) fn failure(stop: Stop, partial: Option<Trajectory>) -> Error {
    match stop {
        Stop::Rhs(e) => e,
        Stop::Failure { t, step } => Error::IntegrationFailure {
            t,
            step,
            partial: partial.map(Box::new),
        },
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Picture {
    Schrodinger,
    Interaction,
}

/// Integrates the model from `initial` and records diagnostics every
/// `config.record_every`.
pub fn evolve(
    initial: impl Into<InitialState>,
    model: &ModelSpec,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    run(initial.into(), model, config, Picture::Schrodinger)
}

/// Integrates the dissipative part alone for `gamma_bar = exp(iHt/hbar) gamma`
/// and maps each sample back with `exp(-iHt/hbar)`. Requires a fixed
/// Hamiltonian and constraints that commute with it.
pub fn evolve_interaction(
    initial: impl Into<InitialState>,
    model: &ModelSpec,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    if model.generalized_energy().is_some() {
        return Err(Error::Unsupported(
            "interaction picture needs a state-independent Hamiltonian".into(),
        ));
    }
    if !model.constraints().is_empty() && !model.constraints_invariant() {
        return Err(Error::Unsupported(
            "interaction picture needs constraints commuting with H".into(),
        ));
    }
    run(initial.into(), model, config, Picture::Interaction)
}

fn run(
    initial: InitialState,
    model: &ModelSpec,
    config: &IntegratorConfig,
    picture: Picture,
) -> Result<Trajectory> {
    config.validate()?;
    if !matches!(
        model.composite_mode(),
        CompositeMode::Single | CompositeMode::ThermalContact
    ) {
        return Err(Error::Unsupported(
            "adiabatic and isolated composites evolve through evolve_composite".into(),
        ));
    }
    let gamma0 = initial.into_gamma()?;
    ensure_same_dim(model.dim(), gamma0.dim())?;

    let include_h = picture == Picture::Schrodinger;
    let hbar = model.units().hbar;
    let max_residual = Cell::new(0.0_f64);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut diags: Vec<Diagnostics> = Vec::new();
    let mut quiet = 0usize;
    let mut stats = IntegrationStats::default();

    let outcome = integrate(
        vec![gamma0.into_matrix()],
        config,
        &mut stats,
        |y| {
            let (dg, gen) = gamma_rate(&y[0], model, include_h)?;
            max_residual.set(max_residual.get().max(gen.multipliers.relative_residual()));
            Ok(vec![dg])
        },
        |y| renormalize(&mut y[0]),
        |t, y| {
            let g = match picture {
                Picture::Schrodinger => y[0].clone(),
                Picture::Interaction => unitary_propagator(model.hamiltonian(), t, hbar) * &y[0],
            };
            let rho = hermitian_part(&(&g * g.adjoint()));
            let gen = model.generator(&rho)?;
            let d = diagnostics(&gen, model)?;
            let is_quiet = d.sigma > 0.0 && d.rate_norm < STATIONARY_RATE * d.sigma;
            quiet = if is_quiet { quiet + 1 } else { 0 };
            times.push(t);
            states.push(DensityMatrix::from_matrix_unchecked(rho));
            diags.push(d);
            Ok(config.stop_when_stationary && quiet >= STATIONARY_SAMPLES)
        },
    );
    stats.max_multiplier_residual = max_residual.get();
    let finish = |status| Trajectory {
        times,
        states,
        diagnostics: diags,
        status,
        stats,
    };
    match outcome {
        Ok(true) => Ok(finish(TrajectoryStatus::Stationary)),
        Ok(false) => Ok(finish(TrajectoryStatus::Completed)),
        Err(stop) => {
            let partial =
                matches!(stop, Stop::Failure { .. }).then(|| finish(TrajectoryStatus::Completed));
            Err(failure(stop, partial))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    /// Largest trace distance between `U rho(t) U^dagger` and the evolution
    /// of `U rho(0) U^dagger`.
    pub max_trace_distance: f64,
    pub samples: usize,
}

/// Compares transform-then-evolve with evolve-then-transform for a unitary
/// `u` commuting with the Hamiltonian.
pub fn covariance_check(
    rho0: &DensityMatrix,
    model: &ModelSpec,
    u: &CMatrix,
    config: &IntegratorConfig,
) -> Result<CovarianceReport> {
    let d = model.dim();
    ensure_same_dim(d, u.nrows())?;
    ensure_same_dim(d, u.ncols())?;
    let unitarity = (u * u.adjoint() - CMatrix::identity(d, d)).norm();
    if unitarity > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "transformation is not unitary, |U U^dagger - I| = {unitarity:e}"
        )));
    }
    let h = model.hamiltonian().matrix();
    let comm = commutator_raw(u, h).norm();
    if comm > 1e-10 * h.norm().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "transformation does not commute with H, |[U, H]| = {comm:e}"
        )));
    }
    let cfg = config.clone().without_stationary_stop();
    let direct = evolve(rho0, model, &cfg)?;
    let moved = evolve(rho0.conjugated(u)?, model, &cfg)?;
    let mut worst = 0.0_f64;
    for (a, b) in direct.states.iter().zip(&moved.states) {
        let ua = hermitian_part(&(u * a.matrix() * u.adjoint()));
        worst = worst.max(trace_distance_raw(&ua, b.matrix()));
    }
    Ok(CovarianceReport {
        max_trace_distance: worst,
        samples: direct.len().min(moved.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{gibbs_density, solve_beta, SupportSpectrum};
    use crate::operators::{pure_fidelity, unitary_evolve, HermitianOperator};
    use crate::random::{random_hermitian, random_mixed, random_pure, random_state_operator};

    #[test]
    fn pure_state_follows_unitary_law() {
        let h = random_hermitian(3, 2);
        let model = ModelSpec::new(h.clone());
        let g = random_pure(3, 3).unwrap();
        let cfg = IntegratorConfig::new(5.0, 1.0);
        let tr = evolve(&g, &model, &cfg).unwrap();
        let exact = unitary_evolve(&g.density(), &h, 5.0, 1.0).unwrap();
        let f = pure_fidelity(&exact, tr.final_state().unwrap()).unwrap();
        assert!(f >= 1.0 - 1e-8, "{f}");
    }

    #[test]
    fn rank_is_preserved() {
        let h = random_hermitian(4, 5);
        let model = ModelSpec::new(h);
        let g = random_state_operator(4, 2, 6).unwrap();
        let tr = evolve(&g, &model, &IntegratorConfig::new(10.0, 1.0)).unwrap();
        for d in &tr.diagnostics {
            assert!(d.eigenvalues[0] <= 1e-8 && d.eigenvalues[1] <= 1e-8);
        }
    }

    #[test]
    fn relaxes_to_gibbs_and_conserves() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 0.5, 1.1, 2.0]);
        let model = ModelSpec::new(h.clone());
        let rho0 = random_mixed(4, 4, 17).unwrap();
        let tr = evolve(&rho0, &model, &IntegratorConfig::new(50.0, 1.0)).unwrap();
        assert!(
            tr.invariant_violations(&model).is_empty(),
            "{:?}",
            tr.invariant_violations(&model)
        );
        let e = tr.diagnostics[0].energy;
        let sol = solve_beta(&SupportSpectrum::from_hamiltonian(&h), e, 1e-14).unwrap();
        let target = gibbs_density(&h, sol.beta, None).unwrap();
        let dist = tr.final_state().unwrap().trace_distance(&target).unwrap();
        assert!(dist < 1e-6, "{dist}");
    }

    #[test]
    fn stationary_start_stops_early() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        let model = ModelSpec::new(h);
        let rho = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        let tr = evolve(&rho, &model, &IntegratorConfig::new(10.0, 0.1)).unwrap();
        assert_eq!(tr.status, TrajectoryStatus::Stationary);
        assert_eq!(tr.len(), 3);
    }

    #[test]
    fn interaction_picture_matches() {
        let h = random_hermitian(3, 21);
        let model = ModelSpec::new(h);
        let rho0 = random_mixed(3, 3, 22).unwrap();
        let cfg = IntegratorConfig::new(3.0, 0.5).without_stationary_stop();
        let a = evolve(&rho0, &model, &cfg).unwrap();
        let b = evolve_interaction(&rho0, &model, &cfg).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((x.matrix() - y.matrix()).norm() < 2e-9);
        }
    }

    #[test]
    fn covariance_identity_is_exact() {
        let h = random_hermitian(3, 31);
        let model = ModelSpec::new(h);
        let rho0 = random_mixed(3, 3, 32).unwrap();
        let cfg = IntegratorConfig::new(2.0, 0.5);
        let r = covariance_check(&rho0, &model, &CMatrix::identity(3, 3), &cfg).unwrap();
        assert_eq!(r.max_trace_distance, 0.0);
        let bad = crate::random::random_unitary(3, 1);
        assert!(covariance_check(&rho0, &model, &bad, &cfg).is_err());
    }

    #[test]
    fn failure_carries_partial_trajectory() {
        let h = random_hermitian(2, 1);
        let model = ModelSpec::new(h);
        let mut cfg = IntegratorConfig::new(10.0, 0.001);
        cfg.max_steps = 5;
        cfg.initial_step = Some(1e-4);
        cfg.max_step = Some(1e-4);
        match evolve(random_mixed(2, 2, 1).unwrap(), &model, &cfg) {
            Err(Error::IntegrationFailure {
                partial: Some(p), ..
            }) => assert!(!p.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
