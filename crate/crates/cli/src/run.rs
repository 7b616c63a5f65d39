//! Subcommand pipelines. Each writes its artifacts under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use seaq_core::dynamics::{CompositeTrajectory, Trajectory};
use seaq_core::equilibrium::{solve_beta, GibbsSolution, SupportSpectrum};
use seaq_core::export::{composite_csv, csv_table, matrix_csv, states_json, trajectory_csv};
use seaq_core::linearized::LinearizedModel;
use seaq_core::operators::average;
use seaq_core::{evolve, evolve_composite, CompositeMode, DensityMatrix, Error, HermitianOperator};

use crate::config::{EquilibriumTarget, Scenario};
use crate::error::CliError;

const BETA_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Equilibrium,
    Linearize,
    Compare,
    Contact,
}

pub struct Runner {
    pub scenario: Scenario,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Runner {
    pub fn run(&self, command: Command) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        match command {
            Command::Evolve => self.evolve(),
            Command::Equilibrium => self.equilibrium(),
            Command::Linearize => self.linearize(),
            Command::Compare => self.compare(),
            Command::Contact => self.contact(),
        }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        self.note(format!("wrote {}", path.display()));
        Ok(path)
    }

    fn every(&self) -> usize {
        self.scenario.config.outputs.every
    }

    fn write_trajectory(&self, traj: &Trajectory) -> Result<(), CliError> {
        let outputs = &self.scenario.config.outputs;
        let traj = thin(traj, self.every());
        self.write(&outputs.trajectory, &trajectory_csv(&traj))?;
        if let Some(name) = &outputs.states {
            let text = states_json(&traj.times, &traj.states).map_err(CliError::from_run)?;
            self.write(name, &text)?;
        }
        Ok(())
    }

    fn evolve(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        let h = s.hamiltonian()?;
        let rho0 = s.initial_state(&h)?;
        let model = s.model(&h, &rho0)?;
        let traj = match evolve(&rho0, &model, &s.config.integrator) {
            Ok(traj) => traj,
            Err(Error::IntegrationFailure { t, step, partial }) => {
                if let Some(p) = partial {
                    self.write_trajectory(&p)?;
                    self.note(format!("flushed {} samples before the failure", p.len()));
                }
                return Err(CliError::Integration(format!("at t = {t} (step {step:e})")));
            }
            Err(e) => return Err(CliError::from_run(e)),
        };
        self.write_trajectory(&traj)?;
        let violations = traj.invariant_violations(&model);
        let last = traj.diagnostics.last();
        let summary = json!({
            "status": traj.status,
            "samples": traj.len(),
            "stats": traj.stats,
            "final": last.map(|d| json!({
                "energy": d.energy,
                "entropy": d.entropy,
                "entropy_production": d.entropy_production,
                "zeta": d.zeta,
            })),
            "violations": violations,
        });
        self.write(&s.config.outputs.summary, &pretty(&summary))?;
        self.note(format!("{} samples, status {:?}", traj.len(), traj.status));
        check(violations)
    }

    fn target(&self, h: &HermitianOperator) -> Result<EquilibriumTarget, CliError> {
        match self.scenario.config.equilibrium {
            Some(t) => Ok(t),
            None => {
                let rho0 = self.scenario.initial_state(h)?;
                Ok(EquilibriumTarget::Energy(energy_of(h, &rho0)?))
            }
        }
    }

    fn gibbs_solution(&self, h: &HermitianOperator) -> Result<GibbsSolution, CliError> {
        let spectrum = SupportSpectrum::from_hamiltonian(h);
        let sol = match self.target(h)? {
            EquilibriumTarget::Energy(e) => solve_beta(&spectrum, e, BETA_TOL),
            EquilibriumTarget::Beta(b) => spectrum.gibbs(b),
        };
        sol.map_err(|e| CliError::Config(format!("at `equilibrium`: {e}")))
    }

    fn equilibrium(&self) -> Result<(), CliError> {
        let h = self.scenario.hamiltonian()?;
        let sol = self.gibbs_solution(&h)?;
        let text = serde_json::to_string_pretty(&sol).expect("serializable");
        println!("{text}");
        self.write(
            &self.scenario.config.outputs.equilibrium,
            &format!("{text}\n"),
        )?;
        Ok(())
    }

    /// Linearization about the configured target, or about the canonical
    /// state sharing the initial energy.
    fn linear_model(
        &self,
        h: &HermitianOperator,
        rho0: &DensityMatrix,
    ) -> Result<(seaq_core::ModelSpec, LinearizedModel), CliError> {
        let s = &self.scenario;
        let model = s.model(h, rho0)?;
        let lin = match s.config.equilibrium {
            None => LinearizedModel::from_state(&model, rho0),
            Some(_) => {
                let sol = self.gibbs_solution(h)?;
                if sol.degenerate {
                    return Err(CliError::Config(
                        "at `equilibrium`: cannot linearize about a ground or top state".into(),
                    ));
                }
                LinearizedModel::from_model(&model, sol.beta)
            }
        };
        let lin = lin.map_err(|e| CliError::Config(format!("linearization: {e}")))?;
        Ok((model, lin))
    }

    fn linearize(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        let h = s.hamiltonian()?;
        let rho0 = s.initial_state(&h)?;
        let (_, lin) = self.linear_model(&h, &rho0)?;
        let outputs = &s.config.outputs;
        self.write(&outputs.rates, &matrix_csv(&lin.rate_matrix()))?;
        self.write(&outputs.summary, &pretty(&json!({ "linearization": lin })))?;

        let d = lin.dim();
        let mut header: Vec<String> = ["t", "deviation_norm", "min_eigenvalue"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=d).map(|k| format!("p_{k}")));
        let mut rows = Vec::new();
        for t in sample_times(s.config.integrator.t_end, s.config.integrator.record_every)
            .into_iter()
            .step_by(self.every())
        {
            let p = lin
                .propagate_state(&rho0, t)
                .map_err(|e| CliError::Config(format!("initial state: {e}")))?;
            let eig = lin.to_eigenbasis(&p.delta) + lin.equilibrium_eigenbasis();
            let mut row = vec![t, p.delta.norm(), p.min_eigenvalue];
            row.extend((0..d).map(|k| eig[(k, k)].re));
            rows.push(row);
        }
        self.write(&outputs.linear, &csv_table(&header, rows))?;
        Ok(())
    }

    fn compare(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        let h = s.hamiltonian()?;
        let rho0 = s.initial_state(&h)?;
        let (model, lin) = self.linear_model(&h, &rho0)?;
        let traj = evolve(&rho0, &model, &s.config.integrator).map_err(CliError::from_run)?;
        let d = lin.dim();
        let rho_eq = lin.equilibrium_eigenbasis();
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|m| (m..d).map(move |n| (m, n))).collect();

        let mut header = vec!["t".to_string()];
        for &(m, n) in &pairs {
            header.push(format!("nonlinear_{}_{}", m + 1, n + 1));
            header.push(format!("linear_{}_{}", m + 1, n + 1));
        }
        let mut rows = Vec::new();
        let mut logs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); pairs.len()];
        for (k, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
            let nonlinear = lin.to_eigenbasis(state.matrix()) - &rho_eq;
            let linear = lin.to_eigenbasis(
                &lin.propagate_state(&rho0, *t)
                    .map_err(CliError::from_run)?
                    .delta,
            );
            let mut row = vec![*t];
            for (j, &(m, n)) in pairs.iter().enumerate() {
                let a = nonlinear[(m, n)].norm();
                row.push(a);
                row.push(linear[(m, n)].norm());
                logs[j].push((*t, a));
            }
            if k % self.every() == 0 {
                rows.push(row);
            }
        }
        let outputs = &s.config.outputs;
        self.write(&outputs.compare, &csv_table(&header, rows))?;

        // fitted decay rates of the elements that start visibly displaced
        let scale = logs.iter().map(|l| l[0].1).fold(0.0_f64, f64::max);
        let mut fits = Vec::new();
        for (j, &(m, n)) in pairs.iter().enumerate() {
            let series = &logs[j];
            if series[0].1 < 1e-3 * scale || series.iter().any(|&(_, a)| a <= 0.0) {
                continue;
            }
            let t: Vec<f64> = series.iter().map(|p| p.0).collect();
            let y: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
            let fitted = -slope(&t, &y);
            let (lambda, _) = lin.decay_rate(m, n).map_err(CliError::from_run)?;
            fits.push(vec![
                (m + 1) as f64,
                (n + 1) as f64,
                lambda,
                fitted,
                (fitted - lambda) / lambda,
            ]);
        }
        let header: Vec<String> = ["mu", "nu", "lambda", "fitted", "rel_err"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        self.write(&outputs.compare_rates, &csv_table(&header, fits))?;
        Ok(())
    }

    fn contact(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        let (h1, h2) = s.factors()?;
        let (r1, r2) = s.factor_states(&h1, &h2)?;
        let model = s.contact_model(&h1, &h2)?;
        let traj =
            evolve_composite(&r1, &r2, &model, &s.config.integrator).map_err(CliError::from_run)?;
        let thinned = thin_composite(&traj, self.every());
        self.write(&s.config.outputs.contact, &composite_csv(&thinned))?;

        let first = traj.diagnostics.first().expect("at least one sample");
        let last = traj.diagnostics.last().expect("at least one sample");
        let factor_beta = |h: &HermitianOperator, e: f64| {
            solve_beta(&SupportSpectrum::from_hamiltonian(h), e, BETA_TOL)
                .ok()
                .map(|s| s.beta)
                .filter(|b| b.is_finite())
        };
        let joint = SupportSpectrum::from_hamiltonian(model.hamiltonian());
        let common = solve_beta(&joint, first.energy1 + first.energy2, BETA_TOL)
            .ok()
            .map(|s| s.beta)
            .filter(|b| b.is_finite());
        let summary = json!({
            "mode": model.composite_mode(),
            "status": traj.status,
            "samples": traj.times.len(),
            "stats": traj.stats,
            "initial": {
                "energy1": first.energy1,
                "energy2": first.energy2,
                "beta1": factor_beta(&h1, first.energy1),
                "beta2": factor_beta(&h2, first.energy2),
            },
            "final": {
                "energy1": last.energy1,
                "energy2": last.energy2,
                "beta1": factor_beta(&h1, last.energy1),
                "beta2": factor_beta(&h2, last.energy2),
            },
            "common_beta": common,
        });
        self.write(&s.config.outputs.summary, &pretty(&summary))?;
        let ranges = [h1.spectral_range(), h2.spectral_range()];
        check(composite_violations(&traj, model.composite_mode(), ranges))
    }
}

fn check(violations: Vec<String>) -> Result<(), CliError> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations))
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn energy_of(h: &HermitianOperator, rho: &DensityMatrix) -> Result<f64, CliError> {
    average(h, rho).map_err(CliError::from_run)
}

/// `0, dt, 2 dt, ...` up to and including `t_end`.
fn sample_times(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    if t_end - times[n] > 1e-9 * dt {
        times.push(t_end);
    }
    times
}

/// Least-squares slope of `y` against `t`.
fn slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let den: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    num / den
}

fn thin(traj: &Trajectory, every: usize) -> Trajectory {
    let keep = |k: &usize| k.is_multiple_of(every);
    Trajectory {
        times: pick(&traj.times, keep),
        states: pick(&traj.states, keep),
        diagnostics: pick(&traj.diagnostics, keep),
        status: traj.status,
        stats: traj.stats.clone(),
    }
}

fn thin_composite(traj: &CompositeTrajectory, every: usize) -> CompositeTrajectory {
    let keep = |k: &usize| k.is_multiple_of(every);
    CompositeTrajectory {
        times: pick(&traj.times, keep),
        first: pick(&traj.first, keep),
        second: pick(&traj.second, keep),
        diagnostics: pick(&traj.diagnostics, keep),
        status: traj.status,
        stats: traj.stats.clone(),
    }
}

fn pick<T: Clone>(v: &[T], keep: impl Fn(&usize) -> bool) -> Vec<T> {
    v.iter()
        .enumerate()
        .filter(|(k, _)| keep(k))
        .map(|(_, x)| x.clone())
        .collect()
}

/// Trace, energy bookkeeping of the coupling mode, and the second law.
fn composite_violations(
    traj: &CompositeTrajectory,
    mode: CompositeMode,
    ranges: [f64; 2],
) -> Vec<String> {
    let mut out = Vec::new();
    let Some(first) = traj.diagnostics.first() else {
        return out;
    };
    let mut prev_entropy = first.entropy1 + first.entropy2;
    for (t, d) in traj.times.iter().zip(&traj.diagnostics) {
        for (k, tr) in [d.trace1, d.trace2].into_iter().enumerate() {
            if (tr - 1.0).abs() > 1e-9 {
                out.push(format!("t = {t}: trace of factor {} is {tr}", k + 1));
            }
        }
        if mode == CompositeMode::ThermalContact {
            let drift = d.energy1 + d.energy2 - first.energy1 - first.energy2;
            if drift.abs() > 1e-7 * (ranges[0] + ranges[1]) {
                out.push(format!("t = {t}: total energy drift {drift:e}"));
            }
        } else {
            for (k, (e, e0)) in [(d.energy1, first.energy1), (d.energy2, first.energy2)]
                .into_iter()
                .enumerate()
            {
                if (e - e0).abs() > 1e-7 * ranges[k] {
                    out.push(format!(
                        "t = {t}: energy drift of factor {} is {:e}",
                        k + 1,
                        e - e0
                    ));
                }
            }
        }
        if d.entropy_production < -1e-12 {
            out.push(format!(
                "t = {t}: negative entropy production {:e}",
                d.entropy_production
            ));
        }
        let s = d.entropy1 + d.entropy2;
        if s < prev_entropy - 1e-9 {
            out.push(format!(
                "t = {t}: entropy decreased by {:e}",
                prev_entropy - s
            ));
        }
        prev_entropy = s;
    }
    out
}

pub fn output_dir(out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_times_cover_the_interval() {
        assert_eq!(sample_times(1.0, 0.5), vec![0.0, 0.5, 1.0]);
        assert_eq!(sample_times(1.0, 0.4), vec![0.0, 0.4, 0.8, 1.0]);
        let t = sample_times(2.0, 0.1);
        assert_eq!(t.len(), 21);
    }

    #[test]
    fn slope_of_a_line() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = t.iter().map(|x| 2.0 - 0.5 * x).collect();
        assert!((slope(&t, &y) + 0.5).abs() < 1e-15);
    }
}
