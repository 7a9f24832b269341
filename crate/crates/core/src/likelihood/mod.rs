//! Per-observation log-likelihood and analytic score.
//!
//! A row splits the manifest variables into observed, right-censored,
//! left-censored and missing components. Binary outcomes are censored at
//! zero: `Y = 1` means `Y* > 0` (right), `Y = 0` means `Y* <= 0` (left). The
//! contribution is
//!
//! ```text
//! log φ(y_o; ξ_o, Ω_oo) + log P(L Y*_c >= L b | Y*_o = y_o)
//! ```
//!
//! with `L` the diagonal sign matrix (+1 right, −1 left). The conditional
//! probability is evaluated as the lower orthant `P(T Y*_c <= T b)` with
//! `T = −L`, and its score via the truncated-moment identity for the
//! parameter derivative of a normal CDF.

use crate::data::{Dataset, Status};
use crate::error::{Error, Result};
use crate::model::{Kind, MomentSystem, ModelSpec, ParameterMap, Side};
use crate::mvn::{inv_mills, log_norm_cdf, GaussianMoments, Integrator};
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;

/// Smallest orthant probability accepted before a pattern is declared
/// degenerate.
pub const MIN_PROBABILITY: f64 = 1e-300;

/// Values of the manifest variables and covariates of one data row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Manifest values, `NaN` when missing.
    pub y: Vec<f64>,
    pub status: Vec<Status>,
    pub x: Vec<f64>,
}

/// Column positions of the model variables in a dataset.
#[derive(Debug, Clone)]
pub struct Layout {
    manifest: Vec<usize>,
    covariates: Vec<usize>,
}

impl Layout {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Layout> {
        let find = |name: &str| {
            data.index(name)
                .ok_or_else(|| Error::Data(format!("data has no column '{name}'")))
        };
        let mut manifest = Vec::with_capacity(spec.manifest.len());
        for (name, kind) in spec.manifest.iter().zip(&spec.kinds) {
            let j = find(name)?;
            if data.has_status(j) && !matches!(kind, Kind::Censored(_)) {
                return Err(Error::Data(format!(
                    "'{name}' has a status column but is not declared censored"
                )));
            }
            manifest.push(j);
        }
        let covariates = spec
            .covariates
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Layout {
            manifest,
            covariates,
        })
    }

    pub fn row(&self, data: &Dataset, i: usize) -> Row {
        Row {
            y: self.manifest.iter().map(|&j| data.value(i, j)).collect(),
            status: self.manifest.iter().map(|&j| data.status(i, j)).collect(),
            x: self.covariates.iter().map(|&j| data.value(i, j)).collect(),
        }
    }
}

/// Partition of the manifest indices of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPattern {
    pub observed_idx: Vec<usize>,
    pub right_idx: Vec<usize>,
    pub left_idx: Vec<usize>,
    pub missing_idx: Vec<usize>,
    /// Observed values, aligned with `observed_idx`.
    pub observed: Vec<f64>,
    /// Censoring bounds, aligned with `right_idx`.
    pub right_bounds: Vec<f64>,
    /// Censoring bounds, aligned with `left_idx`.
    pub left_bounds: Vec<f64>,
}

impl ObservationPattern {
    /// Censored indices, right-censored first.
    pub fn censored_idx(&self) -> Vec<usize> {
        self.right_idx.iter().chain(&self.left_idx).copied().collect()
    }

    /// Diagonal of `L`, aligned with [`censored_idx`](Self::censored_idx).
    pub fn signs(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.right_idx.len()];
        s.extend(std::iter::repeat_n(-1.0, self.left_idx.len()));
        s
    }

    fn bounds(&self) -> Vec<f64> {
        self.right_bounds.iter().chain(&self.left_bounds).copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_idx.is_empty() && self.right_idx.is_empty() && self.left_idx.is_empty()
    }

    /// The same row with every variable outside `keep` treated as missing.
    pub fn restrict(&self, keep: &[usize]) -> ObservationPattern {
        let pick = |idx: &[usize], vals: &[f64]| -> (Vec<usize>, Vec<f64>) {
            idx.iter()
                .zip(vals)
                .filter(|(i, _)| keep.contains(i))
                .map(|(&i, &v)| (i, v))
                .unzip()
        };
        let (observed_idx, observed) = pick(&self.observed_idx, &self.observed);
        let (right_idx, right_bounds) = pick(&self.right_idx, &self.right_bounds);
        let (left_idx, left_bounds) = pick(&self.left_idx, &self.left_bounds);
        let p = self.observed_idx.len()
            + self.right_idx.len()
            + self.left_idx.len()
            + self.missing_idx.len();
        let missing_idx = (0..p)
            .filter(|i| {
                !observed_idx.contains(i) && !right_idx.contains(i) && !left_idx.contains(i)
            })
            .collect();
        ObservationPattern {
            observed_idx,
            right_idx,
            left_idx,
            missing_idx,
            observed,
            right_bounds,
            left_bounds,
        }
    }
}

pub fn classify_pattern(row: &Row, spec: &ModelSpec) -> Result<ObservationPattern> {
    let mut pat = ObservationPattern {
        observed_idx: Vec::new(),
        right_idx: Vec::new(),
        left_idx: Vec::new(),
        missing_idx: Vec::new(),
        observed: Vec::new(),
        right_bounds: Vec::new(),
        left_bounds: Vec::new(),
    };
    for (j, (&y, &status)) in row.y.iter().zip(&row.status).enumerate() {
        let name = &spec.manifest[j];
        if y.is_nan() {
            pat.missing_idx.push(j);
            continue;
        }
        if !y.is_finite() {
            return Err(Error::Data(format!("'{name}' is not finite")));
        }
        match (spec.kinds[j], status) {
            (Kind::Binary, Status::Observed) => {
                if y == 1.0 {
                    pat.right_idx.push(j);
                    pat.right_bounds.push(0.0);
                } else if y == 0.0 {
                    pat.left_idx.push(j);
                    pat.left_bounds.push(0.0);
                } else {
                    return Err(Error::Data(format!(
                        "binary variable '{name}' has value {y}, expected 0 or 1"
                    )));
                }
            }
            (_, Status::Observed) => {
                pat.observed_idx.push(j);
                pat.observed.push(y);
            }
            (Kind::Censored(side), Status::Right) if side != Side::Left => {
                pat.right_idx.push(j);
                pat.right_bounds.push(y);
            }
            (Kind::Censored(side), Status::Left) if side != Side::Right => {
                pat.left_idx.push(j);
                pat.left_bounds.push(y);
            }
            (Kind::Censored(_), s) => {
                return Err(Error::Data(format!(
                    "'{name}' is {}-censored, which its declaration does not allow",
                    s.as_str()
                )));
            }
            (_, _) => {
                return Err(Error::Data(format!(
                    "'{name}' carries a censoring status but is not declared censored"
                )));
            }
        }
    }
    Ok(pat)
}

/// Distribution of the censored block given the observed block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// `∂μ/∂θ'`, k×d.
    pub dmu: DMatrix<f64>,
    /// `∂vecΣ/∂θ'`, k²×d.
    pub dsigma: DMatrix<f64>,
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Slice `∂Ω/∂θ_t` restricted to `rows × cols`.
fn dsub(ms: &MomentSystem, t: usize, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let p = ms.xi.len();
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        ms.domega[(rows[a] + cols[b] * p, t)]
    })
}

/// Observed-block quantities shared by the density and the conditioning.
struct ObservedBlock {
    chol: Cholesky<f64, nalgebra::Dyn>,
    /// `Ω_oo⁻¹ (y_o − ξ_o)`.
    s: DVector<f64>,
    resid: DVector<f64>,
}

fn observed_block(ms: &MomentSystem, pat: &ObservationPattern) -> Result<Option<ObservedBlock>> {
    let o = &pat.observed_idx;
    if o.is_empty() {
        return Ok(None);
    }
    let chol = Cholesky::new(sub(&ms.omega, o, o)).ok_or_else(|| {
        Error::NotPositiveDefinite("covariance of the observed components".into())
    })?;
    let resid = DVector::from_iterator(o.len(), o.iter().zip(&pat.observed).map(|(&i, &y)| y - ms.xi[i]));
    let s = chol.solve(&resid);
    Ok(Some(ObservedBlock { chol, s, resid }))
}

fn conditional(
    ms: &MomentSystem,
    pat: &ObservationPattern,
    ob: Option<&ObservedBlock>,
    with_derivatives: bool,
) -> ConditionalMoments {
    let c = pat.censored_idx();
    let o = &pat.observed_idx;
    let k = c.len();
    let d = ms.dxi.ncols();
    let xi_c = DVector::from_iterator(k, c.iter().map(|&i| ms.xi[i]));
    let omega_cc = sub(&ms.omega, &c, &c);
    let (mu, sigma, gain) = match ob {
        Some(ob) => {
            let omega_co = sub(&ms.omega, &c, o);
            let gain = ob.chol.solve(&omega_co.transpose()).transpose();
            let mu = &xi_c + &gain * &ob.resid;
            let sigma = &omega_cc - &gain * omega_co.transpose();
            (mu, sigma, Some(gain))
        }
        None => (xi_c, omega_cc, None),
    };
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let mut dmu = DMatrix::zeros(k, if with_derivatives { d } else { 0 });
    let mut dsigma = DMatrix::zeros(k * k, if with_derivatives { d } else { 0 });
    if with_derivatives {
        for t in 0..d {
            let mut dm = DVector::from_iterator(k, c.iter().map(|&i| ms.dxi[(i, t)]));
            let mut ds = dsub(ms, t, &c, &c);
            if let (Some(ob), Some(gain)) = (ob, gain.as_ref()) {
                let dxi_o = DVector::from_iterator(o.len(), o.iter().map(|&i| ms.dxi[(i, t)]));
                let d_co = dsub(ms, t, &c, o);
                let d_oo = dsub(ms, t, o, o);
                dm += &d_co * &ob.s - gain * (dxi_o + &d_oo * &ob.s);
                let cross = &d_co * gain.transpose();
                ds += gain * d_oo * gain.transpose() - &cross - cross.transpose();
            }
            dmu.set_column(t, &dm);
            for (e, v) in ds.iter().enumerate() {
                dsigma[(e, t)] = *v;
            }
        }
    }
    ConditionalMoments {
        mu,
        sigma,
        dmu,
        dsigma,
    }
}

pub fn conditional_moments(ms: &MomentSystem, pat: &ObservationPattern) -> Result<ConditionalMoments> {
    let ob = observed_block(ms, pat)?;
    Ok(conditional(ms, pat, ob.as_ref(), true))
}

/// Log-likelihood contribution of one row given its moments, and optionally
/// its score.
pub(crate) fn contribution(
    ms: &MomentSystem,
    pat: &ObservationPattern,
    integrator: &Integrator,
    want_score: bool,
) -> Result<(f64, Option<DVector<f64>>)> {
    let d = ms.dxi.ncols();
    let p = ms.xi.len();
    let mut ll = 0.0;
    let mut score = want_score.then(|| DVector::zeros(d));
    let ob = observed_block(ms, pat)?;
    if let Some(ob) = &ob {
        let o = &pat.observed_idx;
        let log_det: f64 = ob.chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        ll -= 0.5 * (o.len() as f64 * (2.0 * PI).ln() + log_det + ob.resid.dot(&ob.s));
        if let Some(score) = score.as_mut() {
            let inv = ob.chol.inverse();
            for t in 0..d {
                let mut g = 0.0;
                for (a, &i) in o.iter().enumerate() {
                    g += ms.dxi[(i, t)] * ob.s[a];
                    for (b, &j) in o.iter().enumerate() {
                        g += 0.5 * (ob.s[a] * ob.s[b] - inv[(a, b)]) * ms.domega[(i + j * p, t)];
                    }
                }
                score[t] += g;
            }
        }
    }
    let k = pat.right_idx.len() + pat.left_idx.len();
    if k == 0 {
        return Ok((ll, score));
    }
    let cm = conditional(ms, pat, ob.as_ref(), want_score);
    // Lower orthant of T Y*_c with T = −L.
    let t_sign: Vec<f64> = pat.signs().iter().map(|s| -s).collect();
    let mu = DVector::from_fn(k, |i, _| t_sign[i] * cm.mu[i]);
    let sigma = DMatrix::from_fn(k, k, |i, j| t_sign[i] * t_sign[j] * cm.sigma[(i, j)]);
    let upper = DVector::from_iterator(k, pat.bounds().iter().zip(&t_sign).map(|(b, s)| s * b));
    let dmu = DMatrix::from_fn(k, cm.dmu.ncols(), |i, t| t_sign[i] * cm.dmu[(i, t)]);
    let dsigma = DMatrix::from_fn(k * k, cm.dsigma.ncols(), |e, t| {
        t_sign[e % k] * t_sign[e / k] * cm.dsigma[(e, t)]
    });
    if k == 1 {
        let var = sigma[(0, 0)];
        if !(var > 0.0) {
            return Err(Error::NotPositiveDefinite(
                "conditional variance of the censored component".into(),
            ));
        }
        let sd = var.sqrt();
        let z = (upper[0] - mu[0]) / sd;
        ll += log_norm_cdf(z);
        if let Some(score) = score.as_mut() {
            let lambda = inv_mills(z);
            for t in 0..d {
                score[t] += lambda * (-dmu[(0, t)] / sd - z * dsigma[(0, t)] / (2.0 * var));
            }
        }
        return Ok((ll, score));
    }
    let g = GaussianMoments::new(mu, sigma)?;
    let (alpha, grad) = if want_score {
        let (a, grad) = integrator.cdf_with_param_gradient(&upper, &g, &dmu, &dsigma)?;
        (a, Some(grad))
    } else {
        (integrator.cdf(&upper, &g)?.p, None)
    };
    if !(alpha >= MIN_PROBABILITY) {
        return Err(Error::DegeneratePattern(alpha));
    }
    ll += alpha.ln();
    if let (Some(score), Some(grad)) = (score.as_mut(), grad) {
        *score += grad / alpha;
    }
    Ok((ll, score))
}

pub fn loglik_obs(pm: &ParameterMap, theta: &[f64], row: &Row) -> Result<f64> {
    let pat = classify_pattern(row, pm.spec())?;
    if pat.is_empty() {
        return Err(Error::Data("row has no observed components".into()));
    }
    let ms = pm.implied_moments(theta, &row.x)?;
    contribution(&ms, &pat, &Integrator::default(), false).map(|r| r.0)
}

pub fn score_obs(pm: &ParameterMap, theta: &[f64], row: &Row) -> Result<DVector<f64>> {
    let pat = classify_pattern(row, pm.spec())?;
    if pat.is_empty() {
        return Err(Error::Data("row has no observed components".into()));
    }
    let ms = pm.implied_moments(theta, &row.x)?;
    let (_, s) = contribution(&ms, &pat, &Integrator::default(), true)?;
    Ok(s.expect("score requested"))
}

/// Sum in a fixed pairwise order.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Result of evaluating a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    /// Per-row scores (rows × d), when requested.
    pub scores: Option<DMatrix<f64>>,
}

impl Evaluation {
    pub fn score(&self) -> Option<DVector<f64>> {
        self.scores.as_ref().map(|s| s.row_sum().transpose())
    }
}

/// A dataset bound to a model: row patterns and distinct covariate vectors
/// are computed once and reused across parameter values.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pm: &'a ParameterMap,
    rows: Vec<usize>,
    patterns: Vec<ObservationPattern>,
    x_key: Vec<usize>,
    distinct_x: Vec<Vec<f64>>,
    skipped: usize,
    integrator: Integrator,
}

impl<'a> Prepared<'a> {
    pub fn new(pm: &'a ParameterMap, data: &Dataset) -> Result<Self> {
        let layout = Layout::new(pm.spec(), data)?;
        let mut rows = Vec::new();
        let mut patterns = Vec::new();
        let mut x_key = Vec::new();
        let mut distinct_x = Vec::new();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut skipped = 0;
        for i in 0..data.n_rows() {
            let row = layout.row(data, i);
            let pat = classify_pattern(&row, pm.spec()).map_err(|e| e.at_row(i))?;
            if pat.is_empty() {
                skipped += 1;
                continue;
            }
            if let Some(j) = row.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "covariate '{}' is missing",
                    pm.spec().covariates[j]
                ))
                .at_row(i));
            }
            let key: Vec<u64> = row.x.iter().map(|v| v.to_bits()).collect();
            let next = distinct_x.len();
            let k = *seen.entry(key).or_insert(next);
            if k == next {
                distinct_x.push(row.x);
            }
            rows.push(i);
            patterns.push(pat);
            x_key.push(k);
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} rows with every model variable missing");
        }
        Ok(Prepared {
            pm,
            rows,
            patterns,
            x_key,
            distinct_x,
            skipped,
            integrator: Integrator::default(),
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn parameter_map(&self) -> &ParameterMap {
        self.pm
    }

    /// Number of rows that enter the likelihood.
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of rows skipped because every model variable was missing.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Data row indices of the rows that enter the likelihood.
    pub fn row_indices(&self) -> &[usize] {
        &self.rows
    }

    pub fn patterns(&self) -> &[ObservationPattern] {
        &self.patterns
    }

    /// Covariate vector of each prepared row.
    pub(crate) fn row_x(&self) -> Vec<&[f64]> {
        self.x_key.iter().map(|&k| self.distinct_x[k].as_slice()).collect()
    }

    /// Implied moments for every distinct covariate vector.
    pub(crate) fn moments(&self, theta: &[f64]) -> Result<Vec<MomentSystem>> {
        self.distinct_x
            .par_iter()
            .map(|x| self.pm.implied_moments(theta, x))
            .collect()
    }

    /// Per-row contributions for the given patterns (aligned with the
    /// prepared rows). Empty patterns contribute zero.
    pub(crate) fn contributions(
        &self,
        moments: &[MomentSystem],
        patterns: &[ObservationPattern],
        want_score: bool,
    ) -> Result<Vec<(f64, Option<DVector<f64>>)>> {
        let d = self.pm.dim();
        patterns
            .par_iter()
            .enumerate()
            .map(|(r, pat)| {
                if pat.is_empty() {
                    return Ok((0.0, want_score.then(|| DVector::zeros(d))));
                }
                contribution(&moments[self.x_key[r]], pat, &self.integrator, want_score)
                    .map_err(|e| e.at_row(self.rows[r]))
            })
            .collect()
    }

    pub fn evaluate(&self, theta: &[f64], want_scores: bool) -> Result<Evaluation> {
        let moments = self.moments(theta)?;
        let parts = self.contributions(&moments, &self.patterns, want_scores)?;
        Ok(assemble(parts, self.pm.dim(), want_scores))
    }

    pub fn loglik(&self, theta: &[f64]) -> Result<f64> {
        self.evaluate(theta, false).map(|e| e.loglik)
    }
}

pub(crate) fn assemble(parts: Vec<(f64, Option<DVector<f64>>)>, d: usize, want_scores: bool) -> Evaluation {
    let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let scores = want_scores.then(|| {
        let mut s = DMatrix::zeros(parts.len(), d);
        for (i, (_, g)) in parts.iter().enumerate() {
            if let Some(g) = g {
                s.set_row(i, &g.transpose());
            }
        }
        s
    });
    Evaluation {
        loglik: pairwise_sum(&values),
        scores,
    }
}

pub fn loglik(pm: &ParameterMap, theta: &[f64], data: &Dataset) -> Result<f64> {
    Prepared::new(pm, data)?.loglik(theta)
}

pub fn score(pm: &ParameterMap, theta: &[f64], data: &Dataset) -> Result<DVector<f64>> {
    Ok(Prepared::new(pm, data)?
        .evaluate(theta, true)?
        .score()
        .expect("scores requested"))
}
