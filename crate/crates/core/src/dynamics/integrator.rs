//! Dormand-Prince 5(4) with adaptive steps, for autonomous systems.
//!
//! The state is a list of matrix blocks (one block for a single system, one
//! per factor for composites). Steps are clamped so that every record time is
//! hit exactly; `project` runs after each accepted step.

use super::{IntegrationStats, IntegratorConfig};
use crate::error::Error;
use crate::operators::CMatrix;

pub(crate) type Blocks = Vec<CMatrix>;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Why integration stopped early.
pub(crate) enum Stop {
    /// The right-hand side reported an error.
    Rhs(Error),
    /// Step underflow or too many steps.
    Failure { t: f64, step: f64 },
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Rhs(e)
    }
}

fn combo(y: &Blocks, h: f64, terms: &[(f64, &Blocks)]) -> Blocks {
    y.iter()
        .enumerate()
        .map(|(b, yb)| {
            let mut out = yb.clone();
            for (w, k) in terms {
                if *w != 0.0 {
                    out += k[b].scale(h * w);
                }
            }
            out
        })
        .collect()
}

fn norm(y: &Blocks) -> f64 {
    y.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

/// Integrates `dy/dt = f(y)` from `t = 0` to `cfg.t_end`.
///
/// `record(t, y)` is called at `t = 0` and at every multiple of
/// `cfg.record_every` (and at `t_end`); returning `true` stops the run.
pub(crate) fn integrate<F, P, R>(
    y0: Blocks,
    cfg: &IntegratorConfig,
    stats: &mut IntegrationStats,
    mut f: F,
    mut project: P,
    mut record: R,
) -> Result<bool, Stop>
where
    F: FnMut(&Blocks) -> Result<Blocks, Error>,
    P: FnMut(&mut Blocks),
    R: FnMut(f64, &Blocks) -> Result<bool, Error>,
{
    let mut y = y0;
    let mut t = 0.0_f64;
    if record(t, &y)? {
        return Ok(true);
    }
    let max_step = cfg.max_step.unwrap_or(f64::INFINITY);
    let mut next_record = 1usize;
    let record_time = |k: usize| (k as f64 * cfg.record_every).min(cfg.t_end);

    let mut k1 = f(&y)?;
    stats.rhs_evaluations += 1;
    let mut h = match cfg.initial_step {
        Some(h) => h,
        None => {
            let d0 = norm(&y);
            let d1 = norm(&k1);
            let guess = if d0 > 1e-5 && d1 > 1e-5 {
                0.01 * d0 / d1
            } else {
                1e-6
            };
            guess * (cfg.rel_tol / 1e-6).powf(0.2).min(1.0)
        }
    }
    .min(max_step);

    let mut steps = 0usize;
    while t < cfg.t_end {
        let target = record_time(next_record);
        let h_try = h.min(target - t).min(max_step);
        let clamped = h_try < h;
        if h_try < 1e-14 * t.abs().max(1.0) || steps >= cfg.max_steps {
            return Err(Stop::Failure { t, step: h_try });
        }
        steps += 1;

        let k2 = f(&combo(&y, h_try, &[(A21, &k1)]))?;
        let k3 = f(&combo(&y, h_try, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(&combo(&y, h_try, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(&combo(
            &y,
            h_try,
            &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        ))?;
        let k6 = f(&combo(
            &y,
            h_try,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ))?;
        let y5 = combo(
            &y,
            h_try,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = f(&y5)?;
        stats.rhs_evaluations += 6;
        let zero: Blocks = y
            .iter()
            .map(|b| CMatrix::zeros(b.nrows(), b.ncols()))
            .collect();
        let err_vec = combo(
            &zero,
            h_try,
            &[
                (E1, &k1),
                (E3, &k3),
                (E4, &k4),
                (E5, &k5),
                (E6, &k6),
                (E7, &k7),
            ],
        );
        let scale = cfg.abs_tol + cfg.rel_tol * norm(&y).max(norm(&y5));
        let err = norm(&err_vec) / scale;

        let factor = if err == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        if err <= 1.0 {
            stats.accepted_steps += 1;
            t = if h_try == target - t {
                target
            } else {
                t + h_try
            };
            y = y5;
            project(&mut y);
            // keep the proposed step if this one was shortened to hit a record time
            if !clamped {
                h = h_try * factor;
            } else {
                h = h.max(h_try * factor);
            }
            if t >= target {
                next_record += 1;
                if record(t, &y)? {
                    return Ok(true);
                }
            }
            k1 = f(&y)?;
            stats.rhs_evaluations += 1;
        } else {
            stats.rejected_steps += 1;
            h = h_try * factor;
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::c;

    fn scalar(v: f64) -> Blocks {
        vec![CMatrix::from_element(1, 1, c(v))]
    }

    #[test]
    fn exponential_decay_is_accurate() {
        let cfg = IntegratorConfig::new(3.0, 0.5).with_tolerances(1e-10, 1e-12);
        let mut stats = IntegrationStats::default();
        let mut samples = Vec::new();
        let done = integrate(
            scalar(1.0),
            &cfg,
            &mut stats,
            |y| Ok(vec![y[0].scale(-1.3)]),
            |_| {},
            |t, y| {
                samples.push((t, y[0][(0, 0)].re));
                Ok(false)
            },
        );
        assert!(matches!(done, Ok(false)));
        assert_eq!(samples.len(), 7);
        for (k, (t, v)) in samples.iter().enumerate() {
            assert_eq!(*t, (k as f64 * 0.5).min(3.0));
            assert!((v - (-1.3 * t).exp()).abs() < 1e-9);
        }
        assert!(stats.accepted_steps > 0);
    }

    #[test]
    fn harmonic_oscillator_conserves_norm() {
        // y' = -i y on a 2-block state
        let cfg = IntegratorConfig::new(20.0, 5.0).with_tolerances(1e-11, 1e-13);
        let mut stats = IntegrationStats::default();
        let mut last = None;
        integrate(
            vec![
                CMatrix::from_element(1, 1, c(1.0)),
                CMatrix::from_element(2, 1, c(0.5)),
            ],
            &cfg,
            &mut stats,
            |y| {
                Ok(y.iter()
                    .map(|b| b * crate::operators::I.scale(-1.0))
                    .collect())
            },
            |_| {},
            |t, y| {
                last = Some((t, y[0][(0, 0)]));
                Ok(false)
            },
        )
        .ok()
        .unwrap();
        let (t, z) = last.unwrap();
        assert_eq!(t, 20.0);
        assert!((z - num_complex::Complex64::from_polar(1.0, -20.0)).norm() < 1e-8);
    }

    #[test]
    fn max_steps_reports_failure() {
        let mut cfg = IntegratorConfig::new(10.0, 10.0);
        cfg.max_steps = 3;
        cfg.initial_step = Some(1e-3);
        cfg.max_step = Some(1e-3);
        let mut stats = IntegrationStats::default();
        let r = integrate(
            scalar(1.0),
            &cfg,
            &mut stats,
            |y| Ok(y.clone()),
            |_| {},
            |_, _| Ok(false),
        );
        assert!(matches!(r, Err(Stop::Failure { .. })));
    }

    #[test]
    fn record_can_stop_early() {
        let cfg = IntegratorConfig::new(10.0, 1.0);
        let mut stats = IntegrationStats::default();
        let mut n = 0;
        let r = integrate(
            scalar(1.0),
            &cfg,
            &mut stats,
            |y| Ok(vec![y[0].scale(-1.0)]),
            |_| {},
            |_, _| {
                n += 1;
                Ok(n == 3)
            },
        );
        assert!(matches!(r, Ok(true)));
        assert_eq!(n, 3);
    }
}
