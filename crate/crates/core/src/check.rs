//! Finite-difference audit of the analytic score.

use crate::error::Result;
use crate::likelihood::{contribution, Prepared};
use crate::mvn::Integrator;
use nalgebra::DVector;
use rayon::prelude::*;

/// Floor of the denominator in [`relative_error`], so that components that
/// are zero up to rounding are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Five-point central difference gradient of `f` at `theta`.
pub fn numeric_gradient<F>(f: F, theta: &[f64]) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut g = DVector::zeros(theta.len());
    let mut th = theta.to_vec();
    for t in 0..theta.len() {
        let h = 1e-4 * theta[t].abs().max(1.0);
        let mut at = |s: f64| -> Result<f64> {
            th[t] = theta[t] + s * h;
            f(&th)
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        th[t] = theta[t];
        g[t] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    }
    Ok(g)
}

/// Largest relative error between `analytic` and finite differences of `f`
/// at `theta`, with the parameter index where it occurs.
pub fn audit<F>(analytic: &DVector<f64>, theta: &[f64], f: F) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let numeric = numeric_gradient(f, theta)?;
    Ok((0..theta.len())
        .map(|t| (relative_error(analytic[t], numeric[t]), t))
        .fold((0.0, 0), |acc, v| if v.0 > acc.0 { v } else { acc }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCheck {
    pub max_relative_error: f64,
    /// Data row and parameter index of the largest error.
    pub worst_row: usize,
    pub worst_parameter: usize,
    pub rows_checked: usize,
}

/// Compares the analytic score of every row with finite differences of its
/// log-likelihood.
pub fn score_check(prepared: &Prepared, theta: &[f64]) -> Result<ScoreCheck> {
    let pm = prepared.parameter_map();
    let integrator = Integrator::default();
    let xs = prepared.row_x();
    let results: Vec<Result<(f64, usize)>> = prepared
        .patterns()
        .par_iter()
        .zip(xs.par_iter())
        .map(|(pat, x)| {
            let x: &[f64] = x;
            let ms = pm.implied_moments(theta, x)?;
            let analytic = contribution(&ms, pat, &integrator, true)?
                .1
                .expect("score requested");
            audit(&analytic, theta, |th| {
                let ms = pm.implied_moments(th, x)?;
                Ok(contribution(&ms, pat, &integrator, false)?.0)
            })
        })
        .collect();
    let mut out = ScoreCheck {
        max_relative_error: 0.0,
        worst_row: 0,
        worst_parameter: 0,
        rows_checked: 0,
    };
    for (r, res) in results.into_iter().enumerate() {
        let (err, t) = res.map_err(|e| e.at_row(prepared.row_indices()[r]))?;
        out.rows_checked += 1;
        if err > out.max_relative_error {
            out.max_relative_error = err;
            out.worst_row = prepared.row_indices()[r];
            out.worst_parameter = t;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compile, parse_model};
    use crate::Dataset;

    #[test]
    fn finite_differences_of_a_polynomial() {
        let g = numeric_gradient(|t| Ok(t[0].powi(3) + 2.0 * t[0] * t[1]), &[1.5, -2.0]).unwrap();
        assert!((g[0] - (3.0 * 2.25 - 4.0)).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
        assert_eq!(relative_error(1e-9, 0.0), 1e-6);
    }

    #[test]
    fn audit_detects_a_corrupted_score() {
        let f = |t: &[f64]| Ok(-(t[0] - 1.0).powi(2) - 3.0 * t[1] * t[1]);
        let theta = [0.2, 0.5];
        let good = DVector::from_vec(vec![1.6, -3.0]);
        assert!(audit(&good, &theta, f).unwrap().0 < 1e-9);
        let bad = DVector::from_vec(vec![1.6, -3.0 * 1.001]);
        let (err, t) = audit(&bad, &theta, f).unwrap();
        assert!(err > 1e-5);
        assert_eq!(t, 1);
    }

    #[test]
    fn dataset_audit_passes() {
        let pm = compile(&parse_model("latent eta\nbinary B\nZ + B <- eta\neta <- X").unwrap()).unwrap();
        let d = Dataset::new(
            vec!["Z".into(), "B".into(), "X".into()],
            vec![vec![0.3, -1.0, f64::NAN], vec![1.0, 0.0, 1.0], vec![0.5, -0.2, 1.1]],
        )
        .unwrap();
        let prepared = Prepared::new(&pm, &d).unwrap();
        let r = score_check(&prepared, &pm.default_values()).unwrap();
        assert_eq!(r.rows_checked, 3);
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }
}
