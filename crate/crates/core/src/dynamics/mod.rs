//! Equations of motion and their time integration.
//!
//! The integrated quantity is always the state operator `gamma`, evolved by a
//! left multiplication `d gamma/dt = K(rho) gamma`. Positivity of
//! `rho = gamma gamma^dagger` is therefore structural, and the kernel of
//! `gamma^dagger` (the null space of `rho`) is carried along unchanged.

mod composite;
mod evolve;
mod integrator;
mod rhs;

pub use composite::{evolve_composite, rhs_composite, CompositeDiagnostics, CompositeTrajectory};
pub use evolve::{covariance_check, evolve, evolve_interaction, CovarianceReport, InitialState};
pub use rhs::{rhs_gamma, rhs_generalized, rhs_interaction, rhs_rho, rhs_tsallis};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    ConstraintSet, EnergyFunctional, EntropyModel, Generator, GeneratorInputs, SigmaPolicy,
};
use crate::operators::{ensure_same_dim, CMatrix, DensityMatrix, HermitianOperator, UnitsConfig};

/// How the two factors of a composite model share multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeMode {
    #[default]
    Single,
    /// Shared `sigma` and `zeta`; energy flows between the factors.
    ThermalContact,
    /// Shared `sigma`, separate `zeta_i`; each factor conserves its energy.
    Adiabatic,
    /// Separate `sigma_i` and `zeta_i`.
    Isolated,
}

/// Full description of the dynamics.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    hamiltonian: HermitianOperator,
    entropy_model: EntropyModel,
    sigma_policy: SigmaPolicy,
    constraints: ConstraintSet,
    composite_mode: CompositeMode,
    factors: Option<(HermitianOperator, HermitianOperator)>,
    generalized_energy: Option<EnergyFunctional>,
    units: UnitsConfig,
    h_range: f64,
    constraint_ranges: Vec<f64>,
}

impl ModelSpec {
    /// Von Neumann entropy, `sigma = 1`, no constraints, natural units.
    pub fn new(hamiltonian: HermitianOperator) -> Self {
        let h_range = hamiltonian.spectral_range();
        Self {
            hamiltonian,
            entropy_model: EntropyModel::VonNeumann,
            sigma_policy: SigmaPolicy::default(),
            constraints: ConstraintSet::empty(),
            composite_mode: CompositeMode::Single,
            factors: None,
            generalized_energy: None,
            units: UnitsConfig::default(),
            h_range,
            constraint_ranges: Vec::new(),
        }
    }

    /// Two noninteracting factors with `H = H1 (x) I + I (x) H2`.
    pub fn composite(mode: CompositeMode, h1: HermitianOperator, h2: HermitianOperator) -> Self {
        let mut m = Self::new(HermitianOperator::noninteracting_sum(&h1, &h2));
        m.composite_mode = mode;
        m.factors = Some((h1, h2));
        m
    }

    pub fn with_entropy(mut self, entropy: EntropyModel) -> Self {
        self.entropy_model = entropy;
        self
    }

    pub fn with_sigma(mut self, sigma: SigmaPolicy) -> Self {
        self.sigma_policy = sigma;
        self
    }

    pub fn with_constant_sigma(self, sigma: f64) -> Result<Self> {
        Ok(self.with_sigma(SigmaPolicy::constant(sigma)?))
    }

    pub fn with_units(mut self, units: UnitsConfig) -> Result<Self> {
        units.validate()?;
        self.units = units;
        Ok(self)
    }

    pub fn with_constraints(mut self, constraints: ConstraintSet) -> Result<Self> {
        for c in constraints.operators() {
            ensure_same_dim(self.dim(), c.dim())?;
        }
        self.constraint_ranges = constraints
            .operators()
            .iter()
            .map(|c| c.spectral_range())
            .collect();
        self.constraints = constraints;
        Ok(self)
    }

    /// Replaces the fixed Hamiltonian in the equations of motion by `Hhat(rho)`.
    pub fn with_generalized_energy(mut self, energy: EnergyFunctional) -> Self {
        self.generalized_energy = Some(energy);
        self
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.hamiltonian
    }

    pub fn entropy_model(&self) -> &EntropyModel {
        &self.entropy_model
    }

    pub fn sigma_policy(&self) -> &SigmaPolicy {
        &self.sigma_policy
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn composite_mode(&self) -> CompositeMode {
        self.composite_mode
    }

    pub fn factors(&self) -> Option<(&HermitianOperator, &HermitianOperator)> {
        self.factors.as_ref().map(|(a, b)| (a, b))
    }

    pub fn generalized_energy(&self) -> Option<&EnergyFunctional> {
        self.generalized_energy.as_ref()
    }

    pub fn units(&self) -> &UnitsConfig {
        &self.units
    }

    /// Spectral range of the fixed Hamiltonian.
    pub fn energy_range(&self) -> f64 {
        self.h_range
    }

    /// True when every constraint commutes with `H` and with the others.
    pub fn constraints_invariant(&self) -> bool {
        self.constraints.is_invariant(&self.hamiltonian, 1e-10)
    }

    /// Energy operator entering the equations of motion at `rho`.
    pub(crate) fn energy_operator(&self, rho: &CMatrix) -> Result<HermitianOperator> {
        match &self.generalized_energy {
            Some(f) => f.evaluate(rho),
            None => Ok(self.hamiltonian.clone()),
        }
    }

    pub(crate) fn generator(&self, rho: &CMatrix) -> Result<Generator> {
        ensure_same_dim(self.dim(), rho.nrows())?;
        let inputs = GeneratorInputs {
            entropy: &self.entropy_model,
            sigma: &self.sigma_policy,
            constraints: self.constraints.operators(),
            constraint_ranges: Some(&self.constraint_ranges),
            units: &self.units,
        };
        match &self.generalized_energy {
            None => Generator::build(rho, self.hamiltonian.matrix(), Some(self.h_range), &inputs),
            Some(f) => {
                let hh = f.evaluate(rho)?;
                Generator::build(rho, hh.matrix(), None, &inputs)
            }
        }
    }
}

fn default_rel_tol() -> f64 {
    1e-10
}
fn default_abs_tol() -> f64 {
    1e-12
}
fn default_max_steps() -> usize {
    2_000_000
}
fn default_true() -> bool {
    true
}

/// Adaptive step control. The error of a step is measured as the Frobenius
/// norm of the embedded error estimate over `abs_tol + rel_tol * |gamma|_F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Chosen automatically when absent.
    #[serde(default)]
    pub initial_step: Option<f64>,
    /// Unbounded when absent.
    #[serde(default)]
    pub max_step: Option<f64>,
    pub t_end: f64,
    pub record_every: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_true")]
    pub stop_when_stationary: bool,
}

impl IntegratorConfig {
    pub fn new(t_end: f64, record_every: f64) -> Self {
        Self {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            initial_step: None,
            max_step: None,
            t_end,
            record_every,
            max_steps: default_max_steps(),
            stop_when_stationary: true,
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn without_stationary_stop(mut self) -> Self {
        self.stop_when_stationary = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let tol_ok = |t: f64| t > 0.0 && t <= 1e-2;
        if !tol_ok(self.rel_tol) || !tol_ok(self.abs_tol) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must lie in (0, 1e-2], got rel {} abs {}",
                self.rel_tol, self.abs_tol
            )));
        }
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.t_end) || !pos(self.record_every) {
            return Err(Error::InvalidArgument(
                "t_end and record_every must be positive".into(),
            ));
        }
        if self.initial_step.is_some_and(|h| !pos(h)) || self.max_step.is_some_and(|h| !pos(h)) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample diagnostics. Entropies carry units of `k_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub trace: f64,
    /// `Tr(H rho)` for the fixed Hamiltonian.
    pub energy: f64,
    /// Entropy of the model's entropy functional.
    pub entropy: f64,
    pub entropy_production: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub zeta: f64,
    pub constraint_averages: Vec<f64>,
    /// `|d rho/dt|_F`.
    pub rate_norm: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    Stationary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    /// Largest multiplier-system residual relative to the system norm.
    pub max_multiplier_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub diagnostics: Vec<Diagnostics>,
    pub status: TrajectoryStatus,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&DensityMatrix> {
        self.states.last()
    }

    /// Conservation and monotonicity checks along the recorded samples.
    /// Returns a description of every violation found.
    pub fn invariant_violations(&self, model: &ModelSpec) -> Vec<String> {
        let mut out = Vec::new();
        let Some(first) = self.diagnostics.first() else {
            return out;
        };
        let range = model.energy_range().max(f64::MIN_POSITIVE);
        let check_energy =
            model.generalized_energy.is_none() && model.composite_mode != CompositeMode::Adiabatic;
        let constraint_scale: Vec<f64> = model
            .constraints
            .operators()
            .iter()
            .map(|c| {
                c.spectral()
                    .eigenvalues
                    .iter()
                    .fold(0.0_f64, |a, x| a.max(x.abs()))
            })
            .collect();
        let check_constraints = model.constraints_invariant();
        for (k, (t, d)) in self.times.iter().zip(&self.diagnostics).enumerate() {
            if (d.trace - 1.0).abs() > 1e-9 {
                out.push(format!("t = {t}: trace {}", d.trace));
            }
            if check_energy && (d.energy - first.energy).abs() > 1e-7 * range {
                out.push(format!(
                    "t = {t}: energy drift {:e}",
                    d.energy - first.energy
                ));
            }
            if d.entropy_production < -1e-12 {
                out.push(format!(
                    "t = {t}: negative entropy production {:e}",
                    d.entropy_production
                ));
            }
            if k > 0 && d.entropy < self.diagnostics[k - 1].entropy - 1e-9 {
                out.push(format!(
                    "t = {t}: entropy decreased by {:e}",
                    self.diagnostics[k - 1].entropy - d.entropy
                ));
            }
            if check_constraints {
                for (j, (a, a0)) in d
                    .constraint_averages
                    .iter()
                    .zip(&first.constraint_averages)
                    .enumerate()
                {
                    if (a - a0).abs() > 1e-7 * constraint_scale[j].max(f64::MIN_POSITIVE) {
                        out.push(format!("t = {t}: constraint {} drift {:e}", j + 1, a - a0));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::new(1.0, 0.1).validate().is_ok());
        assert!(IntegratorConfig::new(1.0, 0.1)
            .with_tolerances(0.1, 1e-12)
            .validate()
            .is_err());
        assert!(IntegratorConfig::new(-1.0, 0.1).validate().is_err());
        let mut c = IntegratorConfig::new(1.0, 0.1);
        c.max_step = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_defaults_from_json() {
        let c: IntegratorConfig =
            serde_json::from_str(r#"{"t_end": 2, "record_every": 0.5}"#).unwrap();
        assert_eq!(c, IntegratorConfig::new(2.0, 0.5));
    }

    #[test]
    fn composite_hamiltonian_is_sum() {
        let h1 = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        let h2 = HermitianOperator::from_real_diagonal(&[0.0, 2.0]);
        let m = ModelSpec::composite(CompositeMode::ThermalContact, h1, h2);
        let ev = m.hamiltonian().spectral().eigenvalues;
        assert_eq!(ev, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(m.energy_range(), 3.0);
    }

    #[test]
    fn constraint_dimensions_checked() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        let c = ConstraintSet::new(vec![HermitianOperator::identity(3)], vec![1.0]).unwrap();
        assert!(ModelSpec::new(h).with_constraints(c).is_err());
    }
}
