//! Simulation from a model and the observation transforms applied to
//! simulated responses.

mod study;

pub use study::{replication_seed, run_study, ParameterSummary, StudySummary};

use crate::data::{Dataset, Status};
use crate::error::{Error, Result};
use crate::model::{Kind, ParameterMap, Side};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateLaw {
    /// Independent standard normal covariates.
    StandardNormal,
    /// Covariates taken from the rows of a dataset, recycled when `n`
    /// exceeds its length.
    FromData(Dataset),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensoringLaw {
    Fixed(f64),
    /// A censoring time drawn independently for every row.
    Normal { mean: f64, sd: f64 },
}

/// Censoring applied to one simulated variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Censoring {
    pub variable: String,
    pub side: Side,
    pub law: CensoringLaw,
}

/// Draws `n` rows at internal parameters `theta` with no censoring.
pub fn simulate(pm: &ParameterMap, theta: &[f64], n: usize, covariates: &CovariateLaw, seed: u64) -> Result<Dataset> {
    simulate_with(pm, theta, n, covariates, &[], seed)
}

/// Square root `S` of a covariance with `S S' = P`, allowing zero variances.
fn covariance_root(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = p.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = p.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
        return Err(Error::NotPositiveDefinite("residual covariance of the simulation model".into()));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Draws `n` rows and applies the kind transforms: binary variables are
/// `1{Y* > 0}`, censored variables are clipped by `censoring` and carry a
/// status column. Row `i` uses its own ChaCha stream of `seed`, so the output
/// does not depend on thread scheduling.
pub fn simulate_with(
    pm: &ParameterMap,
    theta: &[f64],
    n: usize,
    covariates: &CovariateLaw,
    censoring: &[Censoring],
    seed: u64,
) -> Result<Dataset> {
    let spec = pm.spec();
    let p = pm.n_manifest();
    let q = pm.n_covariates();
    let mut laws = vec![None; p];
    for c in censoring {
        let j = spec
            .manifest
            .iter()
            .position(|m| *m == c.variable)
            .ok_or_else(|| Error::Model(format!("'{}' is not a manifest variable", c.variable)))?;
        let ok = match (spec.kinds[j], c.side) {
            (Kind::Censored(Side::Both), Side::Left | Side::Right) => true,
            (Kind::Censored(s), t) => s == t,
            _ => false,
        };
        if !ok {
            return Err(Error::Model(format!(
                "'{}' is not declared censored on that side",
                c.variable
            )));
        }
        laws[j] = Some((c.side, c.law));
    }
    let covariate_rows: Option<Vec<Vec<f64>>> = match covariates {
        CovariateLaw::StandardNormal => None,
        CovariateLaw::FromData(d) => {
            if d.n_rows() == 0 && n > 0 {
                return Err(Error::Data("covariate data has no rows".into()));
            }
            let cols = spec
                .covariates
                .iter()
                .map(|c| {
                    d.index(c)
                        .ok_or_else(|| Error::Data(format!("covariate data has no column '{c}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<Vec<f64>> = (0..d.n_rows())
                .map(|i| cols.iter().map(|&j| d.value(i, j)).collect())
                .collect();
            if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                return Err(Error::Data("missing covariate value".into()).at_row(i));
            }
            Some(rows)
        }
    };
    // Residual covariance does not depend on covariates.
    let zero_x = vec![0.0; q];
    let root = covariance_root(&pm.structure(theta, &zero_x)?.residual_cov)?;
    let m = pm.n_endogenous();

    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<Status>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x: Vec<f64> = match &covariate_rows {
                None => (0..q).map(|_| StandardNormal.sample(&mut rng)).collect(),
                Some(rows) => rows[i % rows.len()].clone(),
            };
            let rf = pm.reduced_form(theta, &x)?;
            let z = DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(&mut rng)));
            let e = &rf.transfer * (&rf.shift + &root * z);
            let mut y = Vec::with_capacity(p);
            let mut status = vec![Status::Observed; p];
            for j in 0..p {
                let v = e[j];
                y.push(match spec.kinds[j] {
                    Kind::Binary => f64::from(v > 0.0),
                    _ => match laws[j] {
                        None => v,
                        Some((side, law)) => {
                            let bound = match law {
                                CensoringLaw::Fixed(b) => b,
                                CensoringLaw::Normal { mean, sd } => {
                                    let z: f64 = StandardNormal.sample(&mut rng);
                                    mean + sd * z
                                }
                            };
                            match side {
                                Side::Right if v >= bound => {
                                    status[j] = Status::Right;
                                    bound
                                }
                                Side::Left if v <= bound => {
                                    status[j] = Status::Left;
                                    bound
                                }
                                _ => v,
                            }
                        }
                    },
                });
            }
            Ok((y, x, status))
        })
        .collect::<Result<_>>()?;

    let mut names: Vec<String> = spec.manifest.clone();
    names.extend(spec.covariates.iter().cloned());
    let mut columns = vec![Vec::with_capacity(n); p + q];
    for (y, x, _) in &rows {
        for (j, v) in y.iter().chain(x).enumerate() {
            columns[j].push(*v);
        }
    }
    let mut data = Dataset::new(names, columns)?;
    for j in 0..p {
        if matches!(spec.kinds[j], Kind::Censored(_)) {
            data.set_status(&spec.manifest[j], rows.iter().map(|r| r.2[j]).collect())?;
        }
    }
    Ok(data)
}

fn continuous_column(data: &Dataset, column: &str) -> Result<Vec<f64>> {
    data.column(column)
        .map(|c| c.to_vec())
        .ok_or_else(|| Error::Data(format!("no column '{column}'")))
}

fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v.is_nan() || v == 0.0 || v == 1.0)
}

/// Replaces `column` by `1{value > cut}`, keeping missing values. A column
/// that is already binary is returned unchanged.
pub fn dichotomize(data: &Dataset, column: &str, cut: f64) -> Result<Dataset> {
    let values = continuous_column(data, column)?;
    if data.status_column(column).is_some() {
        return Err(Error::Data(format!("column '{column}' is censored, not continuous")));
    }
    let mut out = data.clone();
    if is_binary(&values) {
        return Ok(out);
    }
    let cut_values = values
        .iter()
        .map(|&v| if v.is_nan() { v } else { f64::from(v > cut) })
        .collect();
    out.set_column(column, cut_values)?;
    Ok(out)
}

/// Clips `column` at a fixed bound and records the censoring status. Rows
/// already censored keep their status.
pub fn censor(data: &Dataset, column: &str, side: Side, bound: f64) -> Result<Dataset> {
    let mut values = continuous_column(data, column)?;
    let mut status: Vec<Status> = data
        .status_column(column)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![Status::Observed; values.len()]);
    for (v, s) in values.iter_mut().zip(status.iter_mut()) {
        if v.is_nan() || *s != Status::Observed {
            continue;
        }
        match side {
            Side::Right if *v >= bound => (*v, *s) = (bound, Status::Right),
            Side::Left if *v <= bound => (*v, *s) = (bound, Status::Left),
            Side::Both => return Err(Error::Model("censor needs a left or right side".into())),
            _ => {}
        }
    }
    let mut out = data.clone();
    out.set_column(column, values)?;
    out.set_status(column, status)?;
    Ok(out)
}
