//! Near-equilibrium relaxation about a canonical state.
//!
//! Deviations are handled element-wise in the eigenbasis of `H`. In the
//! interaction picture each element `delta_mu_nu` decays as `exp(-lambda t)`
//! with `lambda = sigma_eq * xcothx(beta (E_mu - E_nu) / 2)`.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::ModelSpec;
use crate::equilibrium::{gibbs_density, solve_beta, SupportSpectrum};
use crate::error::{Error, Result};
use crate::operators::{
    average_raw, commutator_raw, decompose_hermitian, diag_real, ensure_same_dim, hermitian_part,
    CMatrix, DensityMatrix, HermitianOperator,
};

/// Below this magnitude `x coth x` is evaluated by its Taylor series.
const SERIES_CUTOFF: f64 = 1e-3;

/// `x coth(x)`, with value 1 at the origin.
pub fn xcothx(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 + x2 / 3.0 - x2 * x2 / 45.0 + 2.0 * x2 * x2 * x2 / 945.0
    } else {
        x / x.tanh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedModel {
    pub beta: f64,
    pub sigma_eq: f64,
    /// Eigenvalues of `H`, ascending.
    pub energies: Vec<f64>,
    /// Columns are the eigenvectors matching `energies`.
    #[serde(skip)]
    pub eigenvectors: CMatrix,
    /// Canonical populations in the same order.
    pub populations: Vec<f64>,
    pub hbar: f64,
}

/// Interaction-picture deviation after `linear_propagate`, with the smallest
/// eigenvalue of `rho_eq + delta` as a positivity report.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPropagation {
    pub delta: CMatrix,
    pub min_eigenvalue: f64,
}

impl LinearizedModel {
    pub fn new(h: &HermitianOperator, beta: f64, sigma_eq: f64, hbar: f64) -> Result<Self> {
        if !(sigma_eq.is_finite() && sigma_eq > 0.0) {
            return Err(Error::InvalidSigma { value: sigma_eq });
        }
        if !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite, got {beta}"
            )));
        }
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "hbar must be positive, got {hbar}"
            )));
        }
        let sd = h.spectral();
        let top = sd
            .eigenvalues
            .iter()
            .map(|&e| -beta * e)
            .fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = sd
            .eigenvalues
            .iter()
            .map(|&e| (-beta * e - top).exp())
            .collect();
        let z: f64 = w.iter().sum();
        Ok(Self {
            beta,
            sigma_eq,
            energies: sd.eigenvalues.clone(),
            eigenvectors: sd.eigenvectors,
            populations: w.into_iter().map(|x| x / z).collect(),
            hbar,
        })
    }

    /// Linearizes `model` about its canonical state at `beta`; `sigma_eq` is
    /// the model's sigma evaluated there.
    pub fn from_model(model: &ModelSpec, beta: f64) -> Result<Self> {
        let h = model.hamiltonian();
        let g = gibbs_density(h, beta, None)?;
        let energy = average_raw(h.matrix(), g.matrix());
        let centered = h.shifted(-energy);
        let sigma = model
            .sigma_policy()
            .evaluate(g.matrix(), centered.matrix())?;
        Self::new(h, beta, sigma, model.units().hbar)
    }

    /// Linearizes about the canonical state with the same mean energy as `rho`.
    pub fn from_state(model: &ModelSpec, rho: &DensityMatrix) -> Result<Self> {
        let h = model.hamiltonian();
        ensure_same_dim(h.dim(), rho.dim())?;
        let energy = average_raw(h.matrix(), rho.matrix());
        let spectrum = SupportSpectrum::from_hamiltonian(h);
        let sol = solve_beta(&spectrum, energy, 1e-14)?;
        if sol.degenerate {
            return Err(Error::Domain(
                "energy at a spectral edge; no finite-temperature linearization".into(),
            ));
        }
        Self::from_model(model, sol.beta)
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// `rho_eq` in the eigenbasis of `H`.
    pub fn equilibrium_eigenbasis(&self) -> CMatrix {
        diag_real(&self.populations)
    }

    /// `rho_eq` in the original basis.
    pub fn equilibrium(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(self.from_eigenbasis(&self.equilibrium_eigenbasis()))
    }

    pub fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * m * &self.eigenvectors
    }

    pub fn from_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        hermitian_part(&(&self.eigenvectors * m * self.eigenvectors.adjoint()))
    }

    /// `(lambda_mu_nu, gamma_mu_nu)`: total relaxation rate of the element and
    /// its excess over `sigma_eq`.
    pub fn decay_rate(&self, mu: usize, nu: usize) -> Result<(f64, f64)> {
        let d = self.dim();
        if mu >= d || nu >= d {
            return Err(Error::InvalidArgument(format!(
                "index ({mu}, {nu}) out of range for dimension {d}"
            )));
        }
        let x = 0.5 * self.beta * (self.energies[mu] - self.energies[nu]);
        let lambda = self.sigma_eq * xcothx(x);
        Ok((lambda, (lambda - self.sigma_eq).max(0.0)))
    }

    /// Matrix of `lambda_mu_nu`.
    pub fn rate_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |m, n| self.decay_rate(m, n).unwrap().0)
    }

    fn check_deviation(&self, delta0: &CMatrix) -> Result<()> {
        ensure_same_dim(self.dim(), delta0.nrows())?;
        ensure_same_dim(self.dim(), delta0.ncols())?;
        let trace: f64 = (0..self.dim()).map(|k| delta0[(k, k)].re).sum();
        if trace.abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "deviation must be traceless, Tr = {trace:e}"
            )));
        }
        let scale = self.energies.iter().fold(1.0_f64, |a, e| a.max(e.abs()));
        let energy: f64 = (0..self.dim())
            .map(|k| self.energies[k] * delta0[(k, k)].re)
            .sum();
        if energy.abs() > 1e-10 * scale {
            return Err(Error::InvalidArgument(format!(
                "deviation must carry no energy, Tr(H delta) = {energy:e}"
            )));
        }
        Ok(())
    }

    /// Interaction-picture propagation of a deviation given in the
    /// eigenbasis of `H`.
    pub fn linear_propagate(&self, delta0: &CMatrix, t: f64) -> Result<LinearPropagation> {
        self.check_deviation(delta0)?;
        let d = self.dim();
        let rates = self.rate_matrix();
        let delta = CMatrix::from_fn(d, d, |m, n| delta0[(m, n)] * (-rates[(m, n)] * t).exp());
        let min_eigenvalue =
            decompose_hermitian(&(self.equilibrium_eigenbasis() + &delta)).eigenvalues[0];
        Ok(LinearPropagation {
            delta,
            min_eigenvalue,
        })
    }

    /// Full-picture deviation `rho(t) - rho_eq` of the linear solution
    /// starting from `rho0`, in the original basis.
    pub fn propagate_state(&self, rho0: &DensityMatrix, t: f64) -> Result<LinearPropagation> {
        ensure_same_dim(self.dim(), rho0.dim())?;
        let delta0 = self.to_eigenbasis(rho0.normalized().matrix()) - self.equilibrium_eigenbasis();
        let mut out = self.linear_propagate(&delta0, t)?;
        let d = self.dim();
        for m in 0..d {
            for n in 0..d {
                let phase = -(self.energies[m] - self.energies[n]) * t / self.hbar;
                out.delta[(m, n)] *= Complex64::from_polar(1.0, phase);
            }
        }
        out.delta = self.from_eigenbasis(&out.delta);
        Ok(out)
    }

    /// Excess average `<O>_delta(t)` of an observable commuting with `H`;
    /// `delta0` is given in the original basis.
    pub fn commuting_observable_decay(
        &self,
        o: &HermitianOperator,
        delta0: &CMatrix,
        t: f64,
    ) -> Result<f64> {
        ensure_same_dim(self.dim(), o.dim())?;
        let h = self.from_eigenbasis(&diag_real(&self.energies));
        let comm = commutator_raw(&h, o.matrix()).norm();
        if comm > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "observable does not commute with H, |[H, O]| = {comm:e}"
            )));
        }
        self.check_deviation(&self.to_eigenbasis(delta0))?;
        let initial = crate::operators::trace_product(o.matrix(), delta0).re;
        Ok(initial * (-self.sigma_eq * t).exp())
    }

    /// `(k12, k21) = sigma_eq * (n2_eq, n1_eq)` for a two-level `H`.
    pub fn two_level_rates(&self) -> Result<(f64, f64)> {
        ensure_same_dim(2, self.dim())?;
        Ok((
            self.sigma_eq * self.populations[1],
            self.sigma_eq * self.populations[0],
        ))
    }

    /// `(gamma, (2 gamma, omega^2 + gamma^2))` for an oscillator of angular
    /// frequency `omega`.
    pub fn oscillator_damping(&self, omega: f64) -> Result<(f64, (f64, f64))> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "omega must be positive, got {omega}"
            )));
        }
        let gamma = self.sigma_eq * xcothx(0.5 * self.beta * self.hbar * omega);
        Ok((gamma, (2.0 * gamma, omega * omega + gamma * gamma)))
    }
}

/// Drift matrix of the damped `(q, p)` system with unit mass:
/// `q' = p - gamma q`, `p' = -omega^2 q - gamma p`.
pub fn oscillator_drift(omega: f64, gamma: f64) -> Matrix2<f64> {
    Matrix2::new(-gamma, 1.0, -omega * omega, -gamma)
}

/// Roots of `s^2 + c1 s + c0`.
pub fn characteristic_roots(c1: f64, c0: f64) -> (Complex64, Complex64) {
    let disc = Complex64::new(c1 * c1 - 4.0 * c0, 0.0).sqrt();
    (0.5 * (-c1 + disc), 0.5 * (-c1 - disc))
}
