//! Plot-ready CSV and JSON state dumps.
//!
//! Numbers are written in their shortest round-trip form, switching to
//! exponent notation when `|x| < 1e-5` or `|x| >= 1e16`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CompositeTrajectory, Trajectory};
use crate::error::{Error, Result};
use crate::operators::DensityMatrix;

pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if x != 0.0 && (x.abs() < 1e-5 || x.abs() >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Header line plus one line per row.
pub fn csv_table<I>(header: &[String], rows: I) -> String
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(format_number).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `t,trace,energy,entropy,entropy_production,zeta,eig_1..eig_d[,c_1..c_n]`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let d = traj.diagnostics.first().map_or(0, |x| x.eigenvalues.len());
    let n = traj
        .diagnostics
        .first()
        .map_or(0, |x| x.constraint_averages.len());
    let mut header: Vec<String> = [
        "t",
        "trace",
        "energy",
        "entropy",
        "entropy_production",
        "zeta",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=d).map(|k| format!("eig_{k}")));
    header.extend((1..=n).map(|k| format!("c_{k}")));
    let rows = traj.times.iter().zip(&traj.diagnostics).map(|(t, g)| {
        let mut row = vec![
            *t,
            g.trace,
            g.energy,
            g.entropy,
            g.entropy_production,
            g.zeta,
        ];
        row.extend(&g.eigenvalues);
        row.extend(&g.constraint_averages);
        row
    });
    csv_table(&header, rows)
}

pub fn composite_csv(traj: &CompositeTrajectory) -> String {
    let header: Vec<String> = [
        "t",
        "trace1",
        "trace2",
        "energy1",
        "energy2",
        "entropy1",
        "entropy2",
        "zeta1",
        "zeta2",
        "sigma1",
        "sigma2",
        "purity1",
        "purity2",
        "entropy_production",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = traj.times.iter().zip(&traj.diagnostics).map(|(t, g)| {
        vec![
            *t,
            g.trace1,
            g.trace2,
            g.energy1,
            g.energy2,
            g.entropy1,
            g.entropy2,
            g.zeta1,
            g.zeta2,
            g.sigma1,
            g.sigma2,
            g.purity1,
            g.purity2,
            g.entropy_production,
        ]
    });
    csv_table(&header, rows)
}

/// Square real matrix with `mu,nu_1..nu_d` header, rows indexed from 1.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut header = vec!["mu".to_string()];
    header.extend((1..=m.ncols()).map(|k| format!("nu_{k}")));
    let rows = (0..m.nrows()).map(|r| {
        let mut row = vec![(r + 1) as f64];
        row.extend(m.row(r).iter());
        row
    });
    csv_table(&header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub rho: DensityMatrix,
}

pub fn states_json(times: &[f64], states: &[DensityMatrix]) -> Result<String> {
    if times.len() != states.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: states.len(),
        });
    }
    let samples: Vec<StateSample> = times
        .iter()
        .zip(states)
        .map(|(&t, rho)| StateSample {
            t,
            rho: rho.clone(),
        })
        .collect();
    serde_json::to_string_pretty(&samples).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn parse_states_json(text: &str) -> Result<Vec<StateSample>> {
    serde_json::from_str(text).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_mixed;

    #[test]
    fn numbers_round_trip() {
        for x in [
            0.0,
            1.0,
            -0.1,
            1.0 / 3.0,
            1e-5,
            9.99e-6,
            1e16,
            123456.789,
            f64::MIN_POSITIVE,
            -2.5e300,
        ] {
            let s = format_number(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            assert!(s.len() <= 24);
        }
        assert_eq!(format_number(0.25), "0.25");
        assert_eq!(format_number(1e-7), "1e-7");
        assert_eq!(format_number(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn states_round_trip_exactly() {
        let states: Vec<DensityMatrix> = (0..3).map(|k| random_mixed(3, 2, k).unwrap()).collect();
        let times = [0.0, 0.1, 0.2];
        let text = states_json(&times, &states).unwrap();
        let back = parse_states_json(&text).unwrap();
        for (s, b) in states.iter().zip(&back) {
            assert_eq!(s.matrix(), b.rho.matrix());
        }
        assert!(states_json(&times[..2], &states).is_err());
    }

    #[test]
    fn matrix_csv_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(matrix_csv(&m), "mu,nu_1,nu_2\n1,1,0.5\n2,0.5,1\n");
    }
}
