//! Two noninteracting factors evolved as a pair `(rho1, rho2)`.
//!
//! In thermal contact both factors see the joint `sigma` and
//! `zeta = (1/2)(N1 + N2)/(V1 + V2)` with `N_i = <(H_i - E_i)(-ln rho_i)>` and
//! `V_i = <(H_i - E_i)^2>`. Since `ln(rho1 (x) rho2)` splits into a sum, the
//! product `rho1 (x) rho2` then solves the joint equation of motion exactly.

use serde::{Deserialize, Serialize};

use super::evolve::{failure, renormalize, InitialState};
use super::integrator::{integrate, Stop};
use super::{CompositeMode, IntegrationStats, IntegratorConfig, ModelSpec, TrajectoryStatus};
use crate::error::{Error, Result};
use crate::functionals::{floor_scale, EntropyModel, SigmaPolicy, VARIANCE_FLOOR};
use crate::operators::{
    average_raw, decompose_hermitian, ensure_same_dim, hermitian_part, kron, real_trace,
    trace_product, CMatrix, DensityMatrix, HermitianOperator, I,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeDiagnostics {
    pub trace1: f64,
    pub trace2: f64,
    pub energy1: f64,
    pub energy2: f64,
    /// Von Neumann entropies.
    pub entropy1: f64,
    pub entropy2: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub purity1: f64,
    pub purity2: f64,
    /// Sum of the factor entropy productions.
    pub entropy_production: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTrajectory {
    pub times: Vec<f64>,
    pub first: Vec<DensityMatrix>,
    pub second: Vec<DensityMatrix>,
    pub diagnostics: Vec<CompositeDiagnostics>,
    pub status: TrajectoryStatus,
    pub stats: IntegrationStats,
}

struct Factor {
    rho: CMatrix,
    /// `-ln rho` on the support.
    x: CMatrix,
    mean_x: f64,
    /// `H_i - E_i`.
    centered: CMatrix,
    h: CMatrix,
    energy: f64,
    /// `<(H_i - E_i) X_i>`.
    n: f64,
    /// `<(H_i - E_i)^2>`.
    v: f64,
    range: f64,
    entropy: f64,
}

impl Factor {
    fn new(rho: CMatrix, h: &HermitianOperator, range: f64) -> Result<Self> {
        ensure_same_dim(h.dim(), rho.nrows())?;
        let tr = real_trace(&rho);
        let sd = decompose_hermitian(&rho);
        let x = EntropyModel::VonNeumann.gradient_from(&sd)?;
        let entropy = EntropyModel::VonNeumann.entropy_from(&sd)?;
        let mean_x = trace_product(&x, &rho).re / tr;
        let energy = average_raw(h.matrix(), &rho);
        let centered = h.shifted(-energy).into_matrix();
        let ar = &centered * &rho;
        let n = trace_product(&ar, &x).re / tr;
        let v = trace_product(&ar, &centered).re / tr;
        Ok(Self {
            rho,
            x,
            mean_x,
            centered,
            h: h.matrix().clone(),
            energy,
            n,
            v,
            range,
            entropy,
        })
    }

    fn own_zeta(&self) -> f64 {
        if self.v <= VARIANCE_FLOOR * self.range * self.range {
            0.0
        } else {
            0.5 * self.n / self.v
        }
    }

    fn k_matrix(&self, sigma: f64, zeta: f64, hbar: f64, include_h: bool) -> CMatrix {
        let d = self.rho.nrows();
        let mut k = (self.x.scale(-0.5)
            + self.centered.scale(zeta)
            + CMatrix::identity(d, d).scale(0.5 * self.mean_x))
        .scale(-sigma);
        if include_h {
            k -= self.h.map(|z| I * z / hbar);
        }
        k
    }

    fn production(&self, sigma: f64, zeta: f64) -> f64 {
        let k = self.k_matrix(sigma, zeta, 1.0, false);
        2.0 * trace_product(&(&self.x * k), &self.rho).re
    }
}

struct Rates {
    zeta: [f64; 2],
    sigma: [f64; 2],
}

fn joint_sigma(policy: &SigmaPolicy, f1: &Factor, f2: &Factor) -> Result<f64> {
    if let SigmaPolicy::Constant(v) = policy {
        return policy.evaluate(&f1.rho, &f1.centered).map(|_| *v);
    }
    let rho = kron(&f1.rho, &f2.rho);
    let d1 = f1.rho.nrows();
    let d2 = f2.rho.nrows();
    let a = kron(&f1.centered, &CMatrix::identity(d2, d2))
        + kron(&CMatrix::identity(d1, d1), &f2.centered);
    policy.evaluate(&rho, &a)
}

fn rates(f1: &Factor, f2: &Factor, model: &ModelSpec) -> Result<Rates> {
    let policy = model.sigma_policy();
    Ok(match model.composite_mode() {
        CompositeMode::ThermalContact => {
            let sigma = joint_sigma(policy, f1, f2)?;
            let range = f1.range + f2.range;
            let v = f1.v + f2.v;
            let zeta = if v <= VARIANCE_FLOOR * range * range {
                0.0
            } else {
                0.5 * (f1.n + f2.n) / v
            };
            Rates {
                zeta: [zeta, zeta],
                sigma: [sigma, sigma],
            }
        }
        CompositeMode::Adiabatic => {
            let sigma = joint_sigma(policy, f1, f2)?;
            Rates {
                zeta: [f1.own_zeta(), f2.own_zeta()],
                sigma: [sigma, sigma],
            }
        }
        CompositeMode::Isolated => Rates {
            zeta: [f1.own_zeta(), f2.own_zeta()],
            sigma: [
                policy.evaluate(&f1.rho, &f1.centered)?,
                policy.evaluate(&f2.rho, &f2.centered)?,
            ],
        },
        CompositeMode::Single => {
            return Err(Error::Unsupported("model is not composite".into()));
        }
    })
}

fn check_model(model: &ModelSpec) -> Result<(&HermitianOperator, &HermitianOperator)> {
    let Some((h1, h2)) = model.factors() else {
        return Err(Error::Unsupported(
            "model has no factor Hamiltonians".into(),
        ));
    };
    if !model.entropy_model().is_von_neumann()
        || !model.constraints().is_empty()
        || model.generalized_energy().is_some()
    {
        return Err(Error::Unsupported(
            "composite dynamics support the von Neumann entropy without constraints".into(),
        ));
    }
    Ok((h1, h2))
}

/// `(d rho1/dt, d rho2/dt)` for the model's composite mode.
pub fn rhs_composite(
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
    model: &ModelSpec,
) -> Result<(CMatrix, CMatrix)> {
    let (h1, h2) = check_model(model)?;
    let f1 = Factor::new(
        rho1.matrix().clone(),
        h1,
        floor_scale(h1.matrix(), h1.spectral_range()),
    )?;
    let f2 = Factor::new(
        rho2.matrix().clone(),
        h2,
        floor_scale(h2.matrix(), h2.spectral_range()),
    )?;
    let r = rates(&f1, &f2, model)?;
    let hbar = model.units().hbar;
    let dot = |f: &Factor, k: usize| {
        let kr = f.k_matrix(r.sigma[k], r.zeta[k], hbar, true) * &f.rho;
        hermitian_part(&(&kr + kr.adjoint()))
    };
    Ok((dot(&f1, 0), dot(&f2, 1)))
}

fn block_density(g: &CMatrix) -> CMatrix {
    hermitian_part(&(g * g.adjoint()))
}

/// Integrates both factors from their initial states.
pub fn evolve_composite(
    first: impl Into<InitialState>,
    second: impl Into<InitialState>,
    model: &ModelSpec,
    config: &IntegratorConfig,
) -> Result<CompositeTrajectory> {
    config.validate()?;
    let (h1, h2) = check_model(model)?;
    let g1 = first.into().into_gamma()?;
    let g2 = second.into().into_gamma()?;
    ensure_same_dim(h1.dim(), g1.dim())?;
    ensure_same_dim(h2.dim(), g2.dim())?;
    let ranges = [
        floor_scale(h1.matrix(), h1.spectral_range()),
        floor_scale(h2.matrix(), h2.spectral_range()),
    ];
    let hbar = model.units().hbar;
    let kb = model.units().kb;

    let mut times = Vec::new();
    let mut firsts = Vec::new();
    let mut seconds = Vec::new();
    let mut diags = Vec::new();
    let mut stats = IntegrationStats::default();
    let mut quiet = 0usize;

    let outcome = integrate(
        vec![g1.into_matrix(), g2.into_matrix()],
        config,
        &mut stats,
        |y| {
            let f1 = Factor::new(block_density(&y[0]), h1, ranges[0])?;
            let f2 = Factor::new(block_density(&y[1]), h2, ranges[1])?;
            let r = rates(&f1, &f2, model)?;
            Ok(vec![
                f1.k_matrix(r.sigma[0], r.zeta[0], hbar, true) * &y[0],
                f2.k_matrix(r.sigma[1], r.zeta[1], hbar, true) * &y[1],
            ])
        },
        |y| {
            renormalize(&mut y[0]);
            renormalize(&mut y[1]);
        },
        |t, y| {
            let f1 = Factor::new(block_density(&y[0]), h1, ranges[0])?;
            let f2 = Factor::new(block_density(&y[1]), h2, ranges[1])?;
            let r = rates(&f1, &f2, model)?;
            let rate = |f: &Factor, k: usize| {
                let kr = f.k_matrix(r.sigma[k], r.zeta[k], hbar, true) * &f.rho;
                (&kr + kr.adjoint()).norm()
            };
            let rate_norm = rate(&f1, 0) + rate(&f2, 1);
            let sigma_max = r.sigma[0].max(r.sigma[1]);
            let is_quiet = sigma_max > 0.0 && rate_norm < 1e-12 * sigma_max;
            quiet = if is_quiet { quiet + 1 } else { 0 };
            let purity = |f: &Factor| trace_product(&f.rho, &f.rho).re / real_trace(&f.rho).powi(2);
            diags.push(CompositeDiagnostics {
                trace1: real_trace(&f1.rho),
                trace2: real_trace(&f2.rho),
                energy1: f1.energy,
                energy2: f2.energy,
                entropy1: kb * f1.entropy,
                entropy2: kb * f2.entropy,
                zeta1: r.zeta[0],
                zeta2: r.zeta[1],
                sigma1: r.sigma[0],
                sigma2: r.sigma[1],
                purity1: purity(&f1),
                purity2: purity(&f2),
                entropy_production: kb
                    * (f1.production(r.sigma[0], r.zeta[0]) + f2.production(r.sigma[1], r.zeta[1])),
            });
            times.push(t);
            firsts.push(DensityMatrix::from_matrix_unchecked(f1.rho));
            seconds.push(DensityMatrix::from_matrix_unchecked(f2.rho));
            Ok(config.stop_when_stationary && quiet >= 3)
        },
    );
    let status = match outcome {
        Ok(true) => TrajectoryStatus::Stationary,
        Ok(false) => TrajectoryStatus::Completed,
        Err(stop) => {
            return Err(match stop {
                Stop::Rhs(e) => e,
                other => failure(other, None),
            })
        }
    };
    Ok(CompositeTrajectory {
        times,
        first: firsts,
        second: seconds,
        diagnostics: diags,
        status,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use crate::equilibrium::gibbs_density;
    use crate::operators::c;

    fn levels(e: &[f64]) -> HermitianOperator {
        HermitianOperator::from_real_diagonal(e)
    }

    fn with_coherence(rho: &DensityMatrix, eps: f64) -> DensityMatrix {
        let mut m = rho.matrix().clone();
        m[(0, 1)] += c(eps);
        m[(1, 0)] += c(eps);
        DensityMatrix::new(m).unwrap()
    }

    #[test]
    fn common_gibbs_is_stationary_in_all_modes() {
        let h1 = levels(&[0.0, 1.0]);
        let h2 = levels(&[0.0, 0.6, 1.5]);
        let r1 = gibbs_density(&h1, 0.8, None).unwrap();
        let r2 = gibbs_density(&h2, 0.8, None).unwrap();
        for mode in [
            CompositeMode::ThermalContact,
            CompositeMode::Adiabatic,
            CompositeMode::Isolated,
        ] {
            let m = ModelSpec::composite(mode, h1.clone(), h2.clone());
            let (a, b) = rhs_composite(&r1, &r2, &m).unwrap();
            assert!(a.norm() < 1e-14 && b.norm() < 1e-14);
        }
    }

    #[test]
    fn thermal_contact_matches_joint_evolution() {
        let h1 = levels(&[0.0, 1.0]);
        let h2 = levels(&[0.0, 1.5]);
        let r1 = with_coherence(&gibbs_density(&h1, 0.5, None).unwrap(), 0.1);
        let r2 = with_coherence(&gibbs_density(&h2, 2.0, None).unwrap(), 0.05);
        let m = ModelSpec::composite(CompositeMode::ThermalContact, h1, h2);
        let cfg = IntegratorConfig::new(3.0, 0.5).without_stationary_stop();
        let pair = evolve_composite(&r1, &r2, &m, &cfg).unwrap();
        let joint0 = DensityMatrix::new(kron(r1.matrix(), r2.matrix())).unwrap();
        let joint = evolve(&joint0, &m, &cfg).unwrap();
        for k in 0..pair.times.len() {
            let prod = kron(pair.first[k].matrix(), pair.second[k].matrix());
            assert!((prod - joint.states[k].matrix()).norm() < 1e-8);
        }
        let e0 = pair.diagnostics[0].energy1 + pair.diagnostics[0].energy2;
        for d in &pair.diagnostics {
            assert!((d.energy1 + d.energy2 - e0).abs() < 1e-9);
            assert!((d.trace1 - 1.0).abs() < 1e-12 && (d.trace2 - 1.0).abs() < 1e-12);
        }
        let last = pair.diagnostics.last().unwrap();
        assert!((last.energy1 - pair.diagnostics[0].energy1).abs() > 1e-3);
    }

    #[test]
    fn isolated_factors_keep_energy() {
        let h1 = levels(&[0.0, 1.0]);
        let h2 = levels(&[0.0, 1.0]);
        let r1 = with_coherence(&gibbs_density(&h1, 0.5, None).unwrap(), 0.1);
        let r2 = with_coherence(&gibbs_density(&h2, 2.0, None).unwrap(), 0.05);
        for mode in [CompositeMode::Isolated, CompositeMode::Adiabatic] {
            let m = ModelSpec::composite(mode, h1.clone(), h2.clone());
            let cfg = IntegratorConfig::new(5.0, 1.0);
            let pair = evolve_composite(&r1, &r2, &m, &cfg).unwrap();
            let d0 = &pair.diagnostics[0];
            for d in &pair.diagnostics {
                assert!((d.energy1 - d0.energy1).abs() < 1e-9);
                assert!((d.energy2 - d0.energy2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_single_model() {
        let m = ModelSpec::new(levels(&[0.0, 1.0]));
        let r = DensityMatrix::maximally_mixed(2);
        assert!(rhs_composite(&r, &r, &m).is_err());
    }
}
