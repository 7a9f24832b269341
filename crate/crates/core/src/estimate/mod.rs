//! Maximum likelihood estimation by BHHH, standard errors and tests.

mod optim;

pub use optim::{FitOptions, Method};
pub(crate) use optim::{maximize, Evaluated, Objective, Optimum};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::Prepared;
use crate::model::{starting_values, Group, Kind, ParameterMap};
use crate::mvn::norm_cdf;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::fmt;

/// Eigenvalue ratio below which the information matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    pub labels: Vec<String>,
    pub groups: Vec<Group>,
    /// Estimates on the natural scale.
    pub theta_hat: Vec<f64>,
    /// Estimates on the internal (log-variance) scale.
    pub theta_internal: Vec<f64>,
    pub loglik: f64,
    /// Natural-scale covariance of `theta_hat`.
    pub vcov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    /// Two-sided normal p-values; absent for variances.
    pub p: Vec<Option<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub n: usize,
    /// Internal-scale information matrix at `theta_internal`.
    pub information: DMatrix<f64>,
    /// Estimated by composite likelihood with a sandwich variance.
    pub composite: bool,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

struct Mle<'a> {
    prepared: Prepared<'a>,
}

impl Objective for Mle<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.prepared.loglik(theta)
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluated> {
        let e = self.prepared.evaluate(theta, true)?;
        let scores = e.scores.expect("scores requested");
        Ok(Evaluated {
            value: e.loglik,
            gradient: scores.row_sum().transpose(),
            information: scores.transpose() * &scores,
            meat: None,
        })
    }

    fn n(&self) -> usize {
        self.prepared.n()
    }
}

/// Starting values from the options, else from the data.
pub(crate) fn initial_values(pm: &ParameterMap, data: &Dataset, opts: &FitOptions) -> Result<Vec<f64>> {
    if pm.dim() == 0 {
        return Err(Error::Model("model has no free parameters".into()));
    }
    let start = match &opts.start {
        Some(s) if s.len() != pm.dim() => {
            return Err(Error::Dimension(format!(
                "expected {} starting values, got {}",
                pm.dim(),
                s.len()
            )))
        }
        Some(s) => s.clone(),
        None => starting_values(pm, data)?,
    };
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteStart);
    }
    Ok(start)
}

pub fn fit_mle(pm: &ParameterMap, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let prepared = Prepared::new(pm, data)?;
    if prepared.n() == 0 {
        return Err(Error::Data("no rows with observed model variables".into()));
    }
    let start = initial_values(pm, data, opts)?;
    let obj = Mle { prepared };
    let opt = maximize(&obj, start, opts)?;
    finish(pm, opt, obj.n(), false)
}

/// Outer product of the per-row scores, `Σ_i S_i S_i'`, on the internal scale.
pub fn information(pm: &ParameterMap, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    let scores = Prepared::new(pm, data)?
        .evaluate(theta, true)?
        .scores
        .expect("scores requested");
    Ok(scores.transpose() * &scores)
}

/// Inverse of a symmetric information matrix, or the parameters spanning
/// its near-null space.
pub(crate) fn invert_information(pm: &ParameterMap, info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if !(max > 0.0) || min <= SINGULAR_RATIO * max {
        let v = eig.eigenvectors.column(imin);
        let names: Vec<String> = (0..v.len())
            .filter(|&t| v[t].abs() > 0.1)
            .map(|t| pm.parameters()[t].name.clone())
            .collect();
        return Err(Error::SingularInformation(format!(
            " (eigenvalue ratio {:.2e}; involves {})",
            if max > 0.0 { min / max } else { 0.0 },
            names.join(", ")
        )));
    }
    let inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
        * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

pub(crate) fn finish(pm: &ParameterMap, opt: Optimum, n: usize, composite: bool) -> Result<FitResult> {
    let bread = invert_information(pm, &opt.at.information)?;
    let internal_vcov = match &opt.at.meat {
        Some(meat) => &bread * meat * &bread,
        None => bread,
    };
    let d = pm.dim();
    let theta_hat = pm.natural(&opt.theta);
    let jac = DVector::from_iterator(
        d,
        pm.parameters()
            .iter()
            .zip(&theta_hat)
            .map(|(p, v)| if p.log_scale { *v } else { 1.0 }),
    );
    let vcov = DMatrix::from_fn(d, d, |i, j| jac[i] * internal_vcov[(i, j)] * jac[j]);
    let se: Vec<f64> = (0..d).map(|t| vcov[(t, t)].max(0.0).sqrt()).collect();
    let z: Vec<f64> = theta_hat.iter().zip(&se).map(|(v, s)| v / s).collect();
    let p = pm
        .parameters()
        .iter()
        .zip(&z)
        .map(|(prm, z)| (!prm.log_scale).then(|| 2.0 * norm_cdf(-z.abs())))
        .collect();
    if !opt.converged {
        log::warn!("optimizer did not converge after {} iterations", opt.iterations);
    }
    Ok(FitResult {
        names: pm.names(),
        labels: pm.parameters().iter().map(|p| p.display_name()).collect(),
        groups: pm.parameters().iter().map(|p| p.group).collect(),
        theta_hat,
        theta_internal: opt.theta,
        loglik: opt.at.value,
        vcov,
        se,
        z,
        p,
        iterations: opt.iterations,
        converged: opt.converged,
        gradient_norm: opt.at.gradient.amax(),
        n,
        information: opt.at.information,
        composite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
}

fn chi2_upper(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(stat)
}

/// Likelihood ratio test of a restricted fit against a larger one.
pub fn lr_test(restricted: &FitResult, full: &FitResult) -> Result<TestResult> {
    if restricted.composite || full.composite {
        return Err(Error::NotNested("likelihood ratio tests need full-likelihood fits".into()));
    }
    if restricted.n != full.n {
        return Err(Error::NotNested(format!(
            "fits use different numbers of rows ({} and {})",
            restricted.n, full.n
        )));
    }
    if let Some(name) = restricted.names.iter().find(|n| full.index_of(n).is_none()) {
        return Err(Error::NotNested(format!(
            "parameter '{name}' of the restricted model is not in the full model"
        )));
    }
    let df = full.dim() - restricted.dim();
    let stat = 2.0 * (full.loglik - restricted.loglik);
    if stat < -1e-6 * (1.0 + full.loglik.abs()) {
        return Err(Error::NotNested(format!(
            "restricted fit has the larger log-likelihood (difference {:.3e})",
            -stat / 2.0
        )));
    }
    let stat = stat.max(0.0);
    Ok(TestResult {
        stat,
        df,
        p: chi2_upper(stat, df),
    })
}

/// Wald test that the named parameters are jointly zero.
pub fn wald_test(fit: &FitResult, names: &[&str]) -> Result<TestResult> {
    let idx = names
        .iter()
        .map(|n| {
            fit.index_of(n)
                .ok_or_else(|| Error::Model(format!("no parameter named '{n}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = idx.len();
    let b = DVector::from_iterator(k, idx.iter().map(|&t| fit.theta_hat[t]));
    let v = DMatrix::from_fn(k, k, |i, j| fit.vcov[(idx[i], idx[j])]);
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("covariance of the tested parameters".into()))?;
    let stat = b.dot(&chol.solve(&b));
    Ok(TestResult {
        stat,
        df: k,
        p: chi2_upper(stat, k),
    })
}

/// `P(item = 1 | η, x)` at internal parameters `theta`.
pub fn probability(pm: &ParameterMap, theta: &[f64], item: &str, eta: &[f64], covariates: &[f64]) -> Result<f64> {
    let spec = pm.spec();
    let r = spec
        .manifest
        .iter()
        .position(|m| m == item)
        .ok_or_else(|| Error::Model(format!("'{item}' is not a manifest variable")))?;
    if spec.kinds[r] != Kind::Binary {
        return Err(Error::Model(format!("'{item}' is not binary")));
    }
    if eta.len() != spec.latent.len() {
        return Err(Error::Dimension(format!(
            "expected {} latent values, got {}",
            spec.latent.len(),
            eta.len()
        )));
    }
    let st = pm.structure(theta, covariates)?;
    let p = pm.n_manifest();
    if (0..p).any(|j| st.paths[(r, j)] != 0.0) {
        return Err(Error::Model(format!(
            "'{item}' depends on other manifest variables"
        )));
    }
    let lp = st.shift[r] + (0..eta.len()).map(|j| st.paths[(r, p + j)] * eta[j]).sum::<f64>();
    Ok(norm_cdf(lp / st.residual_cov[(r, r)].sqrt()))
}

/// `P(item = 1 | η, x)` at the fitted parameters.
pub fn conditional_probability(
    fit: &FitResult,
    pm: &ParameterMap,
    item: &str,
    eta: &[f64],
    covariates: &[f64],
) -> Result<f64> {
    probability(pm, &fit.theta_internal, item, eta, covariates)
}

impl fmt::Display for FitResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(10) + 3;
        writeln!(
            f,
            "{:width$} {:>12} {:>12} {:>12} {:>12}",
            "", "Estimate", "Std. Error", "Z value", "Pr(>|z|)"
        )?;
        let mut current = None;
        for t in 0..self.dim() {
            if current != Some(self.groups[t]) {
                current = Some(self.groups[t]);
                writeln!(f, "{}:", self.groups[t].title())?;
            }
            let p = match self.p[t] {
                Some(p) if p < 1e-16 => "<1e-16".to_string(),
                Some(p) if p < 1e-4 => format!("{p:.4e}"),
                Some(p) => format!("{p:.7}"),
                None => String::new(),
            };
            writeln!(
                f,
                "   {:w$} {:>12.7} {:>12.7} {:>12.7} {:>12}",
                self.labels[t],
                self.theta_hat[t],
                self.se[t],
                self.z[t],
                p,
                w = width - 3
            )?;
        }
        write!(f, "log-likelihood {:.6}, n = {}", self.loglik, self.n)?;
        if !self.converged {
            write!(f, " (not converged after {} iterations)", self.iterations)?;
        }
        Ok(())
    }
}
