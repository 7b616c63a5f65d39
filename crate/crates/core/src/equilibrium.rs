//! Canonical equilibrium on a finite support.

use serde::{Deserialize, Serialize, Serializer};

use crate::dynamics::{rhs_rho, ModelSpec};
use crate::error::{Error, Result};
use crate::functionals::MultiplierSet;
use crate::operators::{
    commutator_raw, decompose_hermitian, ensure_same_dim, hermitian_part, xlogx, CMatrix,
    DensityMatrix, HermitianOperator, SpectralDecomposition,
};

/// Relative tolerance for grouping equal energies.
const LEVEL_TOL: f64 = 1e-10;

/// Distinct energies (ascending) with their multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSpectrum {
    energies: Vec<f64>,
    multiplicities: Vec<usize>,
}

impl SupportSpectrum {
    /// Sorts and merges exactly equal energies.
    pub fn new(energies: Vec<f64>, multiplicities: Vec<usize>) -> Result<Self> {
        ensure_same_dim(energies.len(), multiplicities.len())?;
        if energies.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        if energies.iter().any(|e| !e.is_finite()) || multiplicities.contains(&0) {
            return Err(Error::InvalidArgument(
                "energies must be finite and multiplicities positive".into(),
            ));
        }
        let mut pairs: Vec<(f64, usize)> = energies.into_iter().zip(multiplicities).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Self {
            energies: Vec::new(),
            multiplicities: Vec::new(),
        };
        for (e, g) in pairs {
            if out.energies.last() == Some(&e) {
                *out.multiplicities.last_mut().unwrap() += g;
            } else {
                out.energies.push(e);
                out.multiplicities.push(g);
            }
        }
        Ok(out)
    }

    /// Groups levels closer than `1e-10 * max(1, range)`.
    pub fn from_levels(levels: &[f64]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        let mut sorted = levels.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tol = LEVEL_TOL * (sorted[sorted.len() - 1] - sorted[0]).max(1.0);
        let mut energies: Vec<f64> = Vec::new();
        let mut mult: Vec<usize> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for e in sorted {
            match energies.last() {
                Some(&last) if (e - last).abs() <= tol => {
                    *mult.last_mut().unwrap() += 1;
                    *sums.last_mut().unwrap() += e;
                }
                _ => {
                    energies.push(e);
                    mult.push(1);
                    sums.push(e);
                }
            }
        }
        let energies = sums.iter().zip(&mult).map(|(s, g)| s / *g as f64).collect();
        Self::new(energies, mult)
    }

    pub fn from_hamiltonian(h: &HermitianOperator) -> Self {
        Self::from_levels(&h.spectral().eigenvalues).expect("nonempty finite spectrum")
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn min(&self) -> f64 {
        self.energies[0]
    }

    pub fn max(&self) -> f64 {
        self.energies[self.energies.len() - 1]
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    /// `(1/N) sum_nu g_nu E_nu`.
    pub fn mean_level(&self) -> f64 {
        let n: usize = self.multiplicities.iter().sum();
        self.weighted_sum(|e| e) / n as f64
    }

    fn weighted_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.energies
            .iter()
            .zip(&self.multiplicities)
            .map(|(&e, &g)| g as f64 * f(e))
            .sum()
    }

    /// `(ln Z, level probabilities)` at finite `beta`, in the log domain.
    fn log_weights(&self, beta: f64) -> (f64, Vec<f64>) {
        let logs: Vec<f64> = self
            .energies
            .iter()
            .zip(&self.multiplicities)
            .map(|(&e, &g)| (g as f64).ln() - beta * e)
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        let log_z = top + sum.ln();
        (log_z, logs.iter().map(|l| (l - log_z).exp()).collect())
    }

    /// Canonical mean energy at inverse temperature `beta`.
    pub fn mean_energy(&self, beta: f64) -> f64 {
        let (_, p) = self.log_weights(beta);
        p.iter().zip(&self.energies).map(|(p, e)| p * e).sum()
    }

    /// Canonical solution at a finite `beta`.
    pub fn gibbs(&self, beta: f64) -> Result<GibbsSolution> {
        if !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite, got {beta}"
            )));
        }
        let (log_z, probabilities) = self.log_weights(beta);
        Ok(GibbsSolution {
            beta,
            log_z,
            probabilities,
            degenerate: false,
        })
    }
}

fn serialize_beta<S: Serializer>(beta: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if beta.is_finite() {
        s.serialize_f64(*beta)
    } else if *beta > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsSolution {
    /// `+inf` or `-inf` exactly when `degenerate` is set.
    #[serde(serialize_with = "serialize_beta")]
    pub beta: f64,
    #[serde(rename = "logZ")]
    pub log_z: f64,
    /// One entry per distinct support energy, multiplicity included.
    pub probabilities: Vec<f64>,
    /// The energy sits at an end of the support; the distribution is uniform
    /// on the extreme level.
    pub degenerate: bool,
}

/// Inverse temperature of the canonical distribution on `spectrum` with mean
/// energy `energy`, by bisection. The bracket starts at `[-1, 1]/range` and
/// doubles outward; bisection runs to full floating-point resolution, and
/// `tol` bounds the accepted energy mismatch relative to the range.
pub fn solve_beta(spectrum: &SupportSpectrum, energy: f64, tol: f64) -> Result<GibbsSolution> {
    let (lo, hi) = (spectrum.min(), spectrum.max());
    let range = spectrum.range();
    if !energy.is_finite() || energy < lo || energy > hi {
        return Err(Error::InfeasibleEnergy {
            energy,
            min: lo,
            max: hi,
        });
    }
    let n = spectrum.energies.len();
    if range == 0.0 {
        return Ok(GibbsSolution {
            beta: 0.0,
            log_z: (spectrum.multiplicities[0] as f64).ln(),
            probabilities: vec![1.0],
            degenerate: false,
        });
    }
    let edge = |k: usize, beta: f64| {
        let mut p = vec![0.0; n];
        p[k] = 1.0;
        GibbsSolution {
            beta,
            log_z: f64::NAN,
            probabilities: p,
            degenerate: true,
        }
    };
    if energy == lo {
        let mut s = edge(0, f64::INFINITY);
        s.log_z = f64::NEG_INFINITY;
        return Ok(s);
    }
    if energy == hi {
        let mut s = edge(n - 1, f64::NEG_INFINITY);
        s.log_z = f64::INFINITY;
        return Ok(s);
    }

    // mean_energy is decreasing in beta
    let mut a = -1.0 / range;
    let mut b = 1.0 / range;
    let mut guard = 0;
    while spectrum.mean_energy(a) < energy && guard < 2000 {
        b = a;
        a *= 2.0;
        guard += 1;
    }
    while spectrum.mean_energy(b) > energy && guard < 4000 {
        a = b.max(a);
        b *= 2.0;
        guard += 1;
    }
    loop {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if spectrum.mean_energy(mid) > energy {
            a = mid;
        } else {
            b = mid;
        }
    }
    let beta =
        if (spectrum.mean_energy(a) - energy).abs() <= (spectrum.mean_energy(b) - energy).abs() {
            a
        } else {
            b
        };
    let mismatch = (spectrum.mean_energy(beta) - energy).abs();
    if mismatch > tol.max(1e-15) * range && !beta.is_finite() {
        return Err(Error::Domain(format!(
            "bisection did not converge for E = {energy}"
        )));
    }
    let (log_z, probabilities) = spectrum.log_weights(beta);
    Ok(GibbsSolution {
        beta,
        log_z,
        probabilities,
        degenerate: false,
    })
}

/// True when `energy` is at or above the multiplicity-weighted mean level,
/// which is exactly when the canonical `beta` is non-positive.
pub fn negative_temperature_predicate(spectrum: &SupportSpectrum, energy: f64) -> bool {
    energy >= spectrum.mean_level()
}

/// Orthonormal basis of the range of a projector.
fn projector_range(p: &CMatrix) -> Result<CMatrix> {
    let sd = decompose_hermitian(p);
    let mut cols = Vec::new();
    for (j, &lam) in sd.eigenvalues.iter().enumerate() {
        if (lam - 1.0).abs() <= 1e-8 {
            cols.push(sd.eigenvectors.column(j).clone_owned());
        } else if lam.abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "support operator is not a projector (eigenvalue {lam})"
            )));
        }
    }
    if cols.is_empty() {
        return Err(Error::InvalidArgument("support projector is zero".into()));
    }
    Ok(CMatrix::from_columns(&cols))
}

/// `exp(-beta H)/Z` restricted to an optional support projector commuting
/// with `H`. Infinite `beta` selects the uniform state on the lowest
/// (`+inf`) or highest (`-inf`) support level.
pub fn gibbs_density(
    h: &HermitianOperator,
    beta: f64,
    support_projector: Option<&HermitianOperator>,
) -> Result<DensityMatrix> {
    if beta.is_nan() {
        return Err(Error::InvalidArgument("beta is NaN".into()));
    }
    let d = h.dim();
    let basis = match support_projector {
        None => CMatrix::identity(d, d),
        Some(p) => {
            ensure_same_dim(d, p.dim())?;
            let comm = commutator_raw(p.matrix(), h.matrix()).norm();
            if comm > 1e-10 * h.matrix().norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "support projector does not commute with H ({comm:e})"
                )));
            }
            projector_range(p.matrix())?
        }
    };
    let restricted = hermitian_part(&(basis.adjoint() * h.matrix() * &basis));
    let sd = decompose_hermitian(&restricted);
    let weights = boltzmann(&sd, beta);
    let mut scaled = sd.eigenvectors.clone();
    for (j, w) in weights.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*w);
    }
    let local = scaled * sd.eigenvectors.adjoint();
    Ok(DensityMatrix::from_matrix_unchecked(hermitian_part(
        &(&basis * local * basis.adjoint()),
    )))
}

fn boltzmann(sd: &SpectralDecomposition, beta: f64) -> Vec<f64> {
    let e = &sd.eigenvalues;
    let tol = LEVEL_TOL * (e[e.len() - 1] - e[0]).max(1.0);
    let raw: Vec<f64> = if beta.is_infinite() {
        let target = if beta > 0.0 { e[0] } else { e[e.len() - 1] };
        e.iter()
            .map(|&x| if (x - target).abs() <= tol { 1.0 } else { 0.0 })
            .collect()
    } else {
        let top = e
            .iter()
            .map(|&x| -beta * x)
            .fold(f64::NEG_INFINITY, f64::max);
        e.iter().map(|&x| (-beta * x - top).exp()).collect()
    };
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumFit {
    /// `2 zeta_eq`, i.e. the inverse temperature.
    pub two_zeta: f64,
    /// `S_eq / k_B`.
    pub entropy: f64,
    pub max_log_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub commutator_norm: f64,
    pub rhs_norm: f64,
    pub stationary: bool,
    pub fit: Option<EquilibriumFit>,
}

/// Occupations of `rho` together with the energy of their common
/// eigenvector with `H`. Degenerate energy blocks of `H` are diagonalized
/// with respect to `rho`.
fn joint_occupations(rho: &CMatrix, h: &HermitianOperator) -> Vec<(f64, f64)> {
    let sd = h.spectral();
    let e = &sd.eigenvalues;
    let tol = LEVEL_TOL * (e[e.len() - 1] - e[0]).max(1.0);
    let mut out = Vec::new();
    let mut start = 0;
    while start < e.len() {
        let mut end = start + 1;
        while end < e.len() && (e[end] - e[start]).abs() <= tol {
            end += 1;
        }
        let block = sd.eigenvectors.columns(start, end - start).clone_owned();
        let local = hermitian_part(&(block.adjoint() * rho * &block));
        let energy = e[start..end].iter().sum::<f64>() / (end - start) as f64;
        for p in decompose_hermitian(&local).eigenvalues {
            out.push((energy, p));
        }
        start = end;
    }
    out
}

/// Reports `|[rho, H]|_F` and `|d rho/dt|_F`; when both are below `tol`,
/// fits `ln p_nu = -2 zeta_eq (E_nu - E) - S_eq/k_B` on the support.
pub fn stationarity_check(
    rho: &DensityMatrix,
    model: &ModelSpec,
    tol: f64,
) -> Result<StationarityReport> {
    let h = model.hamiltonian();
    ensure_same_dim(h.dim(), rho.dim())?;
    let rho = rho.normalized();
    let commutator_norm = commutator_raw(rho.matrix(), h.matrix()).norm();
    let rhs_norm = rhs_rho(&rho, model)?.norm();
    let stationary = commutator_norm <= tol && rhs_norm <= tol;
    let fit = stationary.then(|| fit_canonical(&rho, h));
    Ok(StationarityReport {
        commutator_norm,
        rhs_norm,
        stationary,
        fit,
    })
}

fn fit_canonical(rho: &DensityMatrix, h: &HermitianOperator) -> EquilibriumFit {
    let occ = joint_occupations(rho.matrix(), h);
    let top = occ.iter().map(|o| o.1).fold(0.0_f64, f64::max);
    let support: Vec<(f64, f64)> = occ
        .into_iter()
        .filter(|o| o.1 > crate::operators::SUPPORT_CUTOFF * top)
        .collect();
    let energy: f64 = support.iter().map(|(e, p)| e * p).sum();
    let xs: Vec<f64> = support.iter().map(|(e, _)| e - energy).collect();
    let ys: Vec<f64> = support.iter().map(|(_, p)| p.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let max_log_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    EquilibriumFit {
        two_zeta: -slope,
        entropy: -intercept,
        max_log_residual,
    }
}

/// Flow of the eigenvalues of `rho_bar` under the dissipative dynamics:
/// `(d p_nu/dt, alpha_nu)` with `d p_nu/dt = -sigma [p_nu ln p_nu + alpha_nu p_nu]`
/// and `alpha_nu = 2 zeta <nu|H - E|nu> + S/k_B`, in ascending order of `p_nu`.
pub fn eigenvalue_flow(
    rho_bar: &DensityMatrix,
    h: &HermitianOperator,
    multipliers: &MultiplierSet,
) -> Result<Vec<(f64, f64)>> {
    ensure_same_dim(h.dim(), rho_bar.dim())?;
    let rho = rho_bar.normalized();
    let sd = decompose_hermitian(rho.matrix());
    let cutoff = sd.support_cutoff();
    let p_eff = |p: f64| if p > cutoff { p } else { 0.0 };
    let entropy: f64 = -sd.eigenvalues.iter().map(|&p| xlogx(p_eff(p))).sum::<f64>();
    let energy = crate::operators::average_raw(h.matrix(), rho.matrix());
    let sigma = multipliers.sigma;
    Ok((0..sd.dim())
        .map(|j| {
            let v = sd.eigenvectors.column(j);
            let hv = (v.adjoint() * h.matrix() * v)[(0, 0)].re;
            let alpha = 2.0 * multipliers.zeta * (hv - energy) + entropy;
            let p = p_eff(sd.eigenvalues[j]);
            (-sigma * (xlogx(p) + alpha * p), alpha)
        })
        .collect())
}

/// `dS/dt / k_B = (1/sigma) sum_nu (d eta_nu/dt)^2 exp(-eta_nu)` with
/// `eta_nu = -ln p_nu`, i.e. `(1/sigma) sum_nu (dp_nu/dt)^2 / p_nu`.
pub fn flow_entropy_production(p: &[f64], p_dot: &[f64], sigma: f64) -> f64 {
    p.iter()
        .zip(p_dot)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &dp)| dp * dp / p)
        .sum::<f64>()
        / sigma
}
