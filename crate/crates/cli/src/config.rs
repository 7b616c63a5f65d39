//! Scenario configuration.
//!
//! A scenario is a JSON document. Matrices use `{"dim": d, "entries": [...]}`
//! with entries either a flat row-major list or a list of rows; every complex
//! number is written `[re, im]`.

use std::path::Path;

use serde::Deserialize;

use seaq_core::equilibrium::gibbs_density;
use seaq_core::linearized::LinearizedModel;
use seaq_core::random::{random_hermitian, random_mixed};
use seaq_core::{
    CMatrix, Complex64, CompositeMode, ConstraintSet, DensityMatrix, EnergyFunctional,
    EntropyModel, HermitianOperator, IntegratorConfig, ModelSpec, UnitsConfig,
};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Seed for every random element; `--seed` takes precedence.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub units: UnitsConfig,
    pub hamiltonian: HamiltonianSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub entropy: EntropySpec,
    #[serde(default)]
    pub sigma: SigmaSpec,
    /// Conserved operators; their averages are taken from the initial state.
    #[serde(default)]
    pub constraints: Vec<HermitianOperator>,
    #[serde(default)]
    pub generalized_energy: Option<GeneralizedEnergySpec>,
    /// Coupling used by `contact`.
    #[serde(default)]
    pub contact_mode: ContactMode,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumTarget>,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    Matrix {
        matrix: HermitianOperator,
    },
    Diag {
        levels: Vec<f64>,
    },
    /// Lowest `n` levels of `hbar omega (k + 1/2)`.
    Oscillator {
        n: usize,
        omega: f64,
    },
    TwoLevel {
        e1: f64,
        e2: f64,
    },
    /// Seeded random Hermitian matrix.
    Random {
        dim: usize,
    },
    Composite {
        first: Box<HamiltonianSpec>,
        second: Box<HamiltonianSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Explicit {
        rho: DensityMatrix,
    },
    Gibbs {
        beta: f64,
    },
    /// Amplitudes as `[re, im]` pairs; normalized on load.
    Pure {
        psi: Vec<[f64; 2]>,
    },
    RandomMixed {
        rank: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    MaximallyMixed,
    /// Canonical state at `beta` plus `epsilon` times a seeded traceless,
    /// energy-free deviation of unit Frobenius norm.
    PerturbedGibbs {
        beta: f64,
        epsilon: f64,
    },
    /// One initial state per factor of a composite Hamiltonian.
    Product {
        first: Box<InitialSpec>,
        second: Box<InitialSpec>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EntropySpec {
    #[default]
    VonNeumann,
    Tsallis {
        q: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { value: f64 },
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneralizedEnergySpec {
    Quadratic { lambda: f64 },
    MeanField { lambda: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactMode {
    #[default]
    ThermalContact,
    Adiabatic,
    Isolated,
}

impl From<ContactMode> for CompositeMode {
    fn from(m: ContactMode) -> Self {
        match m {
            ContactMode::ThermalContact => CompositeMode::ThermalContact,
            ContactMode::Adiabatic => CompositeMode::Adiabatic,
            ContactMode::Isolated => CompositeMode::Isolated,
        }
    }
}

/// Target of `equilibrium` and the linearization point of `linearize` and
/// `compare`; defaults to the mean energy of the initial state.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EquilibriumTarget {
    Energy(f64),
    Beta(f64),
}

/// File names under `--out`; `every` keeps one recorded sample in `every`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    pub trajectory: String,
    pub states: Option<String>,
    pub summary: String,
    pub equilibrium: String,
    pub rates: String,
    pub linear: String,
    pub compare: String,
    pub compare_rates: String,
    pub contact: String,
    pub every: usize,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            trajectory: "trajectory.csv".into(),
            states: Some("states.json".into()),
            summary: "summary.json".into(),
            equilibrium: "equilibrium.json".into(),
            rates: "rates.csv".into(),
            linear: "linear.csv".into(),
            compare: "compare.csv".into(),
            compare_rates: "compare_rates.csv".into(),
            contact: "contact.csv".into(),
            every: 1,
        }
    }
}

/// Reads and parses a scenario; schema errors carry the JSON path.
pub fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ScenarioConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    if cfg.outputs.every == 0 {
        return Err(CliError::Config(
            "at `outputs.every`: must be positive".into(),
        ));
    }
    Ok(cfg)
}

fn field<T>(path: &str, r: seaq_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(format!("at `{path}`: {e}")))
}

/// A scenario together with the command-line seed override.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed_override: Option<u64>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig, seed_override: Option<u64>) -> Self {
        Self {
            config,
            seed_override,
        }
    }

    /// Command line first, then the element's own seed, then the top-level one.
    fn require_seed(&self, path: &str, own: Option<u64>) -> Result<u64, CliError> {
        self.seed_override
            .or(own)
            .or(self.config.seed)
            .ok_or_else(|| CliError::Config(format!("at `{path}`: a seed is required")))
    }

    pub fn hamiltonian(&self) -> Result<HermitianOperator, CliError> {
        self.build_hamiltonian(&self.config.hamiltonian, "hamiltonian", 0)
    }

    /// The two factors of a composite Hamiltonian.
    pub fn factors(&self) -> Result<(HermitianOperator, HermitianOperator), CliError> {
        match &self.config.hamiltonian {
            HamiltonianSpec::Composite { first, second } => Ok((
                self.build_hamiltonian(first, "hamiltonian.first", 1)?,
                self.build_hamiltonian(second, "hamiltonian.second", 2)?,
            )),
            _ => Err(CliError::Config(
                "at `hamiltonian`: `contact` needs a composite Hamiltonian".into(),
            )),
        }
    }

    /// `salt` separates the random draws of the two factors.
    fn build_hamiltonian(
        &self,
        spec: &HamiltonianSpec,
        path: &str,
        salt: u64,
    ) -> Result<HermitianOperator, CliError> {
        let bad = |msg: &str| Err(CliError::Config(format!("at `{path}`: {msg}")));
        match spec {
            HamiltonianSpec::Matrix { matrix } => Ok(matrix.clone()),
            HamiltonianSpec::Diag { levels } => {
                if levels.is_empty() || levels.iter().any(|x| !x.is_finite()) {
                    return bad("levels must be a nonempty list of finite numbers");
                }
                Ok(HermitianOperator::from_real_diagonal(levels))
            }
            HamiltonianSpec::Oscillator { n, omega } => {
                if *n == 0 || !omega.is_finite() || *omega <= 0.0 {
                    return bad("need n >= 1 and omega > 0");
                }
                let hbar = self.config.units.hbar;
                let levels: Vec<f64> = (0..*n).map(|k| hbar * omega * (k as f64 + 0.5)).collect();
                Ok(HermitianOperator::from_real_diagonal(&levels))
            }
            HamiltonianSpec::TwoLevel { e1, e2 } => {
                if !e1.is_finite() || !e2.is_finite() {
                    return bad("levels must be finite");
                }
                Ok(HermitianOperator::from_real_diagonal(&[*e1, *e2]))
            }
            HamiltonianSpec::Random { dim } => {
                if *dim == 0 {
                    return bad("dim must be positive");
                }
                let seed = self.require_seed(path, None)?;
                Ok(random_hermitian(*dim, seed.wrapping_add(salt)))
            }
            HamiltonianSpec::Composite { first, second } => {
                let h1 = self.build_hamiltonian(first, &format!("{path}.first"), salt * 2 + 1)?;
                let h2 = self.build_hamiltonian(second, &format!("{path}.second"), salt * 2 + 2)?;
                Ok(HermitianOperator::noninteracting_sum(&h1, &h2))
            }
        }
    }

    pub fn initial_state(&self, h: &HermitianOperator) -> Result<DensityMatrix, CliError> {
        match &self.config.initial {
            InitialSpec::Product { first, second } => {
                let (h1, h2) = self.factors()?;
                let r1 = self.build_state(first, &h1, "initial.first", 1)?;
                let r2 = self.build_state(second, &h2, "initial.second", 2)?;
                let joint = seaq_core::operators::kron(r1.matrix(), r2.matrix());
                field("initial", DensityMatrix::new(joint))
            }
            spec => self.build_state(spec, h, "initial", 0),
        }
    }

    /// Initial states of the two factors for `contact`.
    pub fn factor_states(
        &self,
        h1: &HermitianOperator,
        h2: &HermitianOperator,
    ) -> Result<(DensityMatrix, DensityMatrix), CliError> {
        match &self.config.initial {
            InitialSpec::Product { first, second } => Ok((
                self.build_state(first, h1, "initial.first", 1)?,
                self.build_state(second, h2, "initial.second", 2)?,
            )),
            _ => Err(CliError::Config(
                "at `initial`: `contact` needs a product initial state".into(),
            )),
        }
    }

    fn build_state(
        &self,
        spec: &InitialSpec,
        h: &HermitianOperator,
        path: &str,
        salt: u64,
    ) -> Result<DensityMatrix, CliError> {
        let d = h.dim();
        let state = match spec {
            InitialSpec::Explicit { rho } => rho.clone(),
            InitialSpec::Gibbs { beta } => field(path, gibbs_density(h, *beta, None))?,
            InitialSpec::Pure { psi } => {
                let psi: Vec<Complex64> = psi
                    .iter()
                    .map(|[re, im]| Complex64::new(*re, *im))
                    .collect();
                field(path, DensityMatrix::pure(&psi))?
            }
            InitialSpec::RandomMixed { rank, seed } => {
                if *rank == 0 || *rank > d {
                    return Err(CliError::Config(format!(
                        "at `{path}.rank`: need 1 <= rank <= {d}"
                    )));
                }
                let seed = self.require_seed(path, *seed)?;
                field(path, random_mixed(d, *rank, seed.wrapping_add(salt)))?
            }
            InitialSpec::MaximallyMixed => DensityMatrix::maximally_mixed(d),
            InitialSpec::PerturbedGibbs { beta, epsilon } => {
                let seed = self.require_seed(path, None)?;
                perturbed_gibbs(
                    h,
                    *beta,
                    *epsilon,
                    seed.wrapping_add(salt),
                    &self.config.units,
                )
                .map_err(|e| CliError::Config(format!("at `{path}`: {e}")))?
            }
            InitialSpec::Product { .. } => {
                return Err(CliError::Config(format!(
                    "at `{path}`: product states need a composite Hamiltonian at the top level"
                )))
            }
        };
        if state.dim() != d {
            return Err(CliError::Config(format!(
                "at `{path}`: state dimension {} does not match Hamiltonian dimension {d}",
                state.dim()
            )));
        }
        Ok(state.normalized())
    }

    pub fn entropy_model(&self) -> Result<EntropyModel, CliError> {
        match self.config.entropy {
            EntropySpec::VonNeumann => Ok(EntropyModel::VonNeumann),
            EntropySpec::Tsallis { q } => field("entropy.q", EntropyModel::tsallis(q)),
        }
    }

    /// Model for single-system commands; composite Hamiltonians enter as
    /// their noninteracting sum.
    pub fn model(
        &self,
        h: &HermitianOperator,
        rho0: &DensityMatrix,
    ) -> Result<ModelSpec, CliError> {
        let model = ModelSpec::new(h.clone());
        self.configure(model, h, rho0)
    }

    pub fn contact_model(
        &self,
        h1: &HermitianOperator,
        h2: &HermitianOperator,
    ) -> Result<ModelSpec, CliError> {
        if !self.config.constraints.is_empty() || self.config.generalized_energy.is_some() {
            return Err(CliError::Config(
                "`contact` supports neither constraints nor a generalized energy".into(),
            ));
        }
        let model = ModelSpec::composite(self.config.contact_mode.into(), h1.clone(), h2.clone());
        let model = model.with_entropy(self.entropy_model()?);
        let model = self.apply_sigma(model)?;
        field("units", model.with_units(self.config.units))
    }

    fn apply_sigma(&self, model: ModelSpec) -> Result<ModelSpec, CliError> {
        match self.config.sigma {
            SigmaSpec::Constant { value } => field("sigma.value", model.with_constant_sigma(value)),
        }
    }

    fn configure(
        &self,
        model: ModelSpec,
        h: &HermitianOperator,
        rho0: &DensityMatrix,
    ) -> Result<ModelSpec, CliError> {
        let mut model = self.apply_sigma(model.with_entropy(self.entropy_model()?))?;
        model = field("units", model.with_units(self.config.units))?;
        if !self.config.constraints.is_empty() {
            let set = field(
                "constraints",
                ConstraintSet::from_state(self.config.constraints.clone(), rho0),
            )?;
            model = field("constraints", model.with_constraints(set))?;
        }
        if let Some(g) = &self.config.generalized_energy {
            let energy = match g {
                GeneralizedEnergySpec::Quadratic { lambda } => EnergyFunctional::Quadratic {
                    h: h.clone(),
                    lambda: *lambda,
                },
                GeneralizedEnergySpec::MeanField { lambda } => EnergyFunctional::MeanField {
                    h: h.clone(),
                    lambda: *lambda,
                },
            };
            model = model.with_generalized_energy(energy);
        }
        Ok(model)
    }
}

/// `rho_eq(beta) + epsilon * delta` with `delta` drawn from the seed, expressed
/// in the eigenbasis of `H`, with its diagonal projected off `span{1, E}`.
fn perturbed_gibbs(
    h: &HermitianOperator,
    beta: f64,
    epsilon: f64,
    seed: u64,
    units: &UnitsConfig,
) -> seaq_core::Result<DensityMatrix> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(seaq_core::Error::InvalidArgument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    let lin = LinearizedModel::new(h, beta, 1.0, units.hbar)?;
    let d = lin.dim();
    let raw = random_hermitian(d, seed).into_matrix();
    let mut delta = raw.clone();
    let diag: Vec<f64> = (0..d).map(|k| raw[(k, k)].re).collect();
    let projected = project_diagonal(&diag, &lin.energies);
    for k in 0..d {
        delta[(k, k)] = Complex64::new(projected[k], 0.0);
    }
    let norm = delta.norm();
    if norm > 0.0 {
        delta.unscale_mut(norm);
    }
    let rho = lin.equilibrium_eigenbasis() + delta.scale(epsilon);
    let rho: CMatrix = lin.from_eigenbasis(&rho);
    let rho = DensityMatrix::new(rho)?;
    if rho.eigenvalues()[0] < 0.0 {
        return Err(seaq_core::Error::PositivityViolation {
            eigenvalue: rho.eigenvalues()[0],
        });
    }
    Ok(rho)
}

/// Removes the components of `v` along the constant vector and `energies`.
fn project_diagonal(v: &[f64], energies: &[f64]) -> Vec<f64> {
    let d = v.len() as f64;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / d;
    let mv = mean(v);
    let me = mean(energies);
    let e: Vec<f64> = energies.iter().map(|x| x - me).collect();
    let ee: f64 = e.iter().map(|x| x * x).sum();
    let w: Vec<f64> = v.iter().map(|x| x - mv).collect();
    let c = if ee > 0.0 {
        w.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ee
    } else {
        0.0
    };
    w.iter().zip(&e).map(|(a, b)| a - c * b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "hamiltonian": {"two_level": {"e1": 0.0, "e2": 1.0}},
        "initial": {"gibbs": {"beta": 1.0}},
        "integrator": {"t_end": 1.0, "record_every": 0.5}
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse(BASE).unwrap();
        assert!(matches!(cfg.entropy, EntropySpec::VonNeumann));
        assert_eq!(cfg.outputs.trajectory, "trajectory.csv");
        assert_eq!(cfg.integrator.t_end, 1.0);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = BASE.replace(r#""e2": 1.0"#, r#""e2": "one""#);
        match parse(&text) {
            Err(CliError::Config(msg)) => {
                assert!(msg.contains("hamiltonian.two_level.e2"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
        let text = BASE.replace(r#""t_end": 1.0"#, r#""t_end": 1.0, "bogus": 3"#);
        match parse(&text) {
            Err(CliError::Config(msg)) => assert!(msg.contains("integrator"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn random_elements_need_a_seed() {
        let text = BASE.replace(
            r#"{"gibbs": {"beta": 1.0}}"#,
            r#"{"random_mixed": {"rank": 2}}"#,
        );
        let cfg = parse(&text).unwrap();
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        assert!(Scenario::new(cfg.clone(), None).initial_state(&h).is_err());
        let a = Scenario::new(cfg.clone(), Some(3))
            .initial_state(&h)
            .unwrap();
        let b = Scenario::new(cfg, Some(3)).initial_state(&h).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn oscillator_levels() {
        let text = BASE.replace(
            r#"{"two_level": {"e1": 0.0, "e2": 1.0}}"#,
            r#"{"oscillator": {"n": 3, "omega": 2.0}}"#,
        );
        let s = Scenario::new(parse(&text).unwrap(), None);
        let h = s.hamiltonian().unwrap();
        assert_eq!(h.spectral().eigenvalues, vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn perturbed_gibbs_is_admissible() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 0.5, 1.2, 2.0]);
        let units = UnitsConfig::default();
        let rho = perturbed_gibbs(&h, 1.0, 1e-3, 5, &units).unwrap();
        let eq = gibbs_density(&h, 1.0, None).unwrap();
        let dev = rho.matrix() - eq.matrix();
        assert!((dev.norm() - 1e-3).abs() <= 1e-12);
        assert!(dev.trace().norm() <= 1e-15);
        assert!((h.matrix() * &dev).trace().norm() <= 1e-15);
    }
}
