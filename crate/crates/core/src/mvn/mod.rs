//! Dense multivariate normal numerics.
//!
//! Lower orthant probabilities `P(X <= y)` and everything built on top of
//! them: the gradient and Hessian of the CDF in its argument, the truncated
//! first and second moment integrals
//!
//! ```text
//! M(y)_i  = ∫_{x <= y} φ(x) (x_i - μ_i) dx
//! V(y)_ij = ∫_{x <= y} φ(x) (x_i - μ_i)(x_j - μ_j) dx
//! ```
//!
//! and the derivative of the CDF with respect to parameters that move the
//! mean and covariance.
//!
//! Orthants of dimension one and two use closed forms; three and four are
//! computed by nested adaptive quadrature over the most constraining
//! coordinate; higher dimensions fall back to a randomized lattice rule with a
//! fixed seed.

mod bivariate;
pub mod quadrature;
mod qmc;
pub mod univariate;

pub use bivariate::{bvn_cdf, bvn_pdf};
pub use univariate::{inv_mills, log_norm_cdf, norm_cdf, norm_pdf, norm_quantile};

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use univariate::LN_SQRT_2PI;

/// Largest accepted condition number of a correlation matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Largest supported orthant dimension.
pub const MAX_DIM: usize = 25;

/// Mean and covariance of a multivariate normal, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::Dimension(format!(
                "mean has length {k} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..k {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        check_covariance(&cov)?;
        Ok(GaussianMoments { mean, cov })
    }

    pub fn standard(k: usize) -> Self {
        GaussianMoments {
            mean: DVector::zeros(k),
            cov: DMatrix::identity(k, k),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Checks positive variances, positive definiteness and conditioning of a
/// symmetric covariance matrix. The condition number is taken on the implied
/// correlation matrix so the check is scale free.
pub(crate) fn check_covariance(cov: &DMatrix<f64>) -> Result<()> {
    let k = cov.nrows();
    for i in 0..k {
        let v = cov[(i, i)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "variance {i} is {v}, expected a positive finite value"
            )));
        }
    }
    if k <= 1 {
        return Ok(());
    }
    let corr = correlation(cov).1;
    let eig = SymmetricEigen::new(corr);
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest correlation eigenvalue is {min:.3e}"
        )));
    }
    let condition = max / min;
    if condition > MAX_CONDITION {
        return Err(Error::NearSingular {
            condition,
            context: "covariance of the normal kernel".into(),
        });
    }
    Ok(())
}

/// Returns the standard deviations and the correlation matrix.
fn correlation(cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sd = cov.diagonal().map(f64::sqrt);
    let k = sd.len();
    let corr = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    });
    (sd, corr)
}

/// An orthant probability with its absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfValue {
    pub p: f64,
    pub err: f64,
}

/// Truncated moment integrals over the lower orthant at `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMoments {
    /// Probability mass of the orthant.
    pub alpha: f64,
    /// First centered moment integral.
    pub m: DVector<f64>,
    /// Second centered moment integral.
    pub v: DMatrix<f64>,
}

/// Numerical settings for orthant probabilities. Immutable and cheap to
/// copy; the lattice seed is part of the configuration so repeated calls
/// return identical results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub seed: u64,
    /// Absolute error target of the lattice rule (dimension 5 and up).
    pub lattice_tol: f64,
    /// Maximum number of lattice integrand evaluations.
    pub max_points: usize,
    /// Relative error target of the nested quadrature (dimension 3 and 4).
    pub quad_rel_tol: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            seed: 0x5eed_1a7e,
            lattice_tol: 1e-6,
            max_points: 4_000_000,
            quad_rel_tol: 1e-12,
        }
    }
}

fn sub_matrix(r: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| r[(idx[a], idx[b])])
}

/// Conditional distribution of the remaining coordinates of a standardized
/// normal given coordinates `fixed` at their (finite) limits, re-standardized.
/// Returns the limits and correlation of the remaining coordinates.
fn condition_standard(
    z: &[f64],
    r: &DMatrix<f64>,
    fixed: &[usize],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let k = z.len();
    let rest: Vec<usize> = (0..k).filter(|i| !fixed.contains(i)).collect();
    let r_aa = sub_matrix(r, fixed);
    let inv = r_aa
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("conditioning block is singular".into()))?;
    let z_a = DVector::from_iterator(fixed.len(), fixed.iter().map(|&i| z[i]));
    let r_ba = DMatrix::from_fn(rest.len(), fixed.len(), |b, a| r[(rest[b], fixed[a])]);
    let gain = &r_ba * inv;
    let shift = &gain * z_a;
    let cov = sub_matrix(r, &rest) - &gain * r_ba.transpose();
    let mut sd = Vec::with_capacity(rest.len());
    for b in 0..rest.len() {
        let v = cov[(b, b)];
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite(
                "conditional variance is not positive".into(),
            ));
        }
        sd.push(v.sqrt());
    }
    let limits = rest
        .iter()
        .enumerate()
        .map(|(b, &i)| (z[i] - shift[b]) / sd[b])
        .collect();
    let corr = DMatrix::from_fn(rest.len(), rest.len(), |a, b| {
        if a == b {
            1.0
        } else {
            cov[(a, b)] / (sd[a] * sd[b])
        }
    });
    Ok((limits, corr))
}

impl Integrator {
    /// Lower orthant probability of a standardized normal. Limits may be
    /// infinite; `r` must be a correlation matrix.
    fn std_orthant(&self, z: &[f64], r: &DMatrix<f64>) -> Result<CdfValue> {
        if z.iter().any(|v| v.is_nan()) {
            return Err(Error::Dimension("NaN integration limit".into()));
        }
        if z.contains(&f64::NEG_INFINITY) {
            return Ok(CdfValue { p: 0.0, err: 0.0 });
        }
        let finite: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_finite()).collect();
        let zf: Vec<f64> = finite.iter().map(|&i| z[i]).collect();
        match finite.len() {
            0 => Ok(CdfValue { p: 1.0, err: 0.0 }),
            1 => Ok(CdfValue {
                p: norm_cdf(zf[0]),
                err: 1e-16,
            }),
            2 => Ok(CdfValue {
                p: bvn_cdf(zf[0], zf[1], r[(finite[0], finite[1])]),
                err: 1e-15,
            }),
            m if m > MAX_DIM => Err(Error::Dimension(format!(
                "orthant dimension {m} exceeds {MAX_DIM}"
            ))),
            m => {
                let rf = if m == z.len() {
                    r.clone()
                } else {
                    sub_matrix(r, &finite)
                };
                if m <= 4 {
                    self.nested_orthant(&zf, &rf)
                } else {
                    let (p, err) =
                        qmc::lattice_orthant(&zf, &rf, self.lattice_tol, self.max_points, self.seed)?;
                    Ok(CdfValue { p, err })
                }
            }
        }
    }

    /// Integrates over the coordinate with the smallest limit the density
    /// times the orthant probability of the rest conditional on it.
    fn nested_orthant(&self, z: &[f64], r: &DMatrix<f64>) -> Result<CdfValue> {
        let k = z.len();
        let pivot = (0..k)
            .min_by(|&a, &b| z[a].total_cmp(&z[b]))
            .unwrap_or(0);
        let rest: Vec<usize> = (0..k).filter(|&i| i != pivot).collect();
        let sd: Vec<f64> = rest
            .iter()
            .map(|&j| (1.0 - r[(j, pivot)] * r[(j, pivot)]).max(0.0).sqrt())
            .collect();
        if sd.iter().any(|&s| s <= 1e-8) {
            return Err(Error::NotPositiveDefinite(
                "near-perfect correlation in orthant".into(),
            ));
        }
        let corr = DMatrix::from_fn(rest.len(), rest.len(), |a, b| {
            if a == b {
                1.0
            } else {
                let (i, j) = (rest[a], rest[b]);
                (r[(i, j)] - r[(i, pivot)] * r[(j, pivot)]) / (sd[a] * sd[b])
            }
        });
        let upper = z[pivot];
        let lower = upper.min(0.0) - 10.0;
        let mut failure = None;
        let mut limits = vec![0.0; rest.len()];
        let integral = quadrature::integrate(
            |x| {
                for (a, &j) in rest.iter().enumerate() {
                    limits[a] = (z[j] - r[(j, pivot)] * x) / sd[a];
                }
                match self.std_orthant(&limits, &corr) {
                    Ok(v) => norm_pdf(x) * v.p,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            lower,
            upper,
            1e-300,
            self.quad_rel_tol,
            200,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(CdfValue {
            p: integral.value.clamp(0.0, 1.0),
            err: integral.error,
        })
    }

    /// Gradient of the standardized orthant probability in its limits.
    fn std_gradient(&self, z: &[f64], r: &DMatrix<f64>) -> Result<DVector<f64>> {
        let k = z.len();
        let mut grad = DVector::zeros(k);
        if z.contains(&f64::NEG_INFINITY) {
            return Ok(grad);
        }
        for i in 0..k {
            if !z[i].is_finite() {
                continue;
            }
            let dens = norm_pdf(z[i]);
            grad[i] = if k == 1 {
                dens
            } else {
                let (zc, rc) = condition_standard(z, r, &[i])?;
                dens * self.std_orthant(&zc, &rc)?.p
            };
        }
        Ok(grad)
    }

    /// Hessian of the standardized orthant probability. Off-diagonal entries
    /// are bivariate densities times conditional orthants; the diagonal
    /// follows from differentiating `φ(z_i) Φ(z_rest | z_i)` in `z_i`.
    fn std_hessian(&self, z: &[f64], r: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DMatrix<f64>> {
        let k = z.len();
        let mut h = DMatrix::zeros(k, k);
        if z.contains(&f64::NEG_INFINITY) {
            return Ok(h);
        }
        for i in 0..k {
            if !z[i].is_finite() {
                continue;
            }
            for j in 0..i {
                if !z[j].is_finite() {
                    continue;
                }
                let dens = bvn_pdf(z[i], z[j], r[(i, j)]);
                let tail = if k == 2 {
                    1.0
                } else {
                    let (zc, rc) = condition_standard(z, r, &[j, i])?;
                    self.std_orthant(&zc, &rc)?.p
                };
                h[(i, j)] = dens * tail;
                h[(j, i)] = h[(i, j)];
            }
        }
        for i in 0..k {
            if !z[i].is_finite() {
                continue;
            }
            let mut d = -z[i] * grad[i];
            for j in 0..k {
                if j != i {
                    d -= r[(j, i)] * h[(i, j)];
                }
            }
            h[(i, i)] = d;
        }
        Ok(h)
    }

    fn standardize(&self, y: &DVector<f64>, g: &GaussianMoments) -> Result<(Vec<f64>, DVector<f64>, DMatrix<f64>)> {
        if y.len() != g.dim() {
            return Err(Error::Dimension(format!(
                "argument has length {} but the distribution has dimension {}",
                y.len(),
                g.dim()
            )));
        }
        let (sd, corr) = correlation(&g.cov);
        let z = (0..y.len()).map(|i| (y[i] - g.mean[i]) / sd[i]).collect();
        Ok((z, sd, corr))
    }

    /// `P(X <= upper)` for `X ~ g`.
    pub fn cdf(&self, upper: &DVector<f64>, g: &GaussianMoments) -> Result<CdfValue> {
        if g.dim() == 0 {
            return Ok(CdfValue { p: 1.0, err: 0.0 });
        }
        let (z, _, corr) = self.standardize(upper, g)?;
        self.std_orthant(&z, &corr)
    }

    /// Gradient of `P(X <= y)` with respect to `y`.
    pub fn gradient(&self, y: &DVector<f64>, g: &GaussianMoments) -> Result<DVector<f64>> {
        let (z, sd, corr) = self.standardize(y, g)?;
        let grad = self.std_gradient(&z, &corr)?;
        Ok(grad.component_div(&sd))
    }

    /// Hessian of `P(X <= y)` with respect to `y`.
    pub fn hessian(&self, y: &DVector<f64>, g: &GaussianMoments) -> Result<DMatrix<f64>> {
        let (z, sd, corr) = self.standardize(y, g)?;
        let grad = self.std_gradient(&z, &corr)?;
        let h = self.std_hessian(&z, &corr, &grad)?;
        Ok(DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| {
            h[(i, j)] / (sd[i] * sd[j])
        }))
    }

    /// Truncated moment integrals over `{x <= y}`, obtained from the gradient
    /// and Hessian of the standardized CDF:
    /// `M = -Λ R DΦ_R(z)` and `V = Φ Σ + Λ R HΦ_R(z) R Λ` with
    /// `z = Λ⁻¹(y - μ)`.
    pub fn truncated_moments(&self, y: &DVector<f64>, g: &GaussianMoments) -> Result<TruncatedMoments> {
        let (z, sd, corr) = self.standardize(y, g)?;
        let alpha = self.std_orthant(&z, &corr)?.p;
        let grad = self.std_gradient(&z, &corr)?;
        let hess = self.std_hessian(&z, &corr, &grad)?;
        let lambda = DMatrix::from_diagonal(&sd);
        let lr = &lambda * &corr;
        let m = -(&lr * grad);
        let v = &g.cov * alpha + &lr * hess * lr.transpose();
        let v = (&v + v.transpose()) * 0.5;
        Ok(TruncatedMoments { alpha, m, v })
    }

    /// Derivative of `P(X <= y)` for `X ~ N(μ(θ), Σ(θ))` with respect to θ,
    /// given `dmu = ∂μ/∂θ'` (k×d) and `dsigma = ∂vecΣ/∂θ'` (k²×d, column-major
    /// vec). Returns the probability and its gradient.
    pub fn cdf_with_param_gradient(
        &self,
        y: &DVector<f64>,
        g: &GaussianMoments,
        dmu: &DMatrix<f64>,
        dsigma: &DMatrix<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        let k = g.dim();
        if dmu.nrows() != k || dsigma.nrows() != k * k || dmu.ncols() != dsigma.ncols() {
            return Err(Error::Dimension(format!(
                "expected dmu with {k} rows and dsigma with {} rows and equal columns, got {}x{} and {}x{}",
                k * k,
                dmu.nrows(),
                dmu.ncols(),
                dsigma.nrows(),
                dsigma.ncols()
            )));
        }
        let tm = self.truncated_moments(y, g)?;
        let inv = Cholesky::new(g.cov.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?
            .inverse();
        let a = &inv * &tm.v * &inv - &inv * tm.alpha;
        let b = &inv * &tm.m;
        let mut out = dmu.tr_mul(&b);
        for t in 0..dsigma.ncols() {
            let mut s = 0.0;
            for c in 0..k {
                for r in 0..k {
                    s += dsigma[(r + c * k, t)] * a[(r, c)];
                }
            }
            out[t] += 0.5 * s;
        }
        Ok((tm.alpha, out))
    }
}

/// Log density of `g` at `x`.
pub fn mvn_logpdf(x: &DVector<f64>, g: &GaussianMoments) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::Dimension(format!(
            "point has length {} but the distribution has dimension {}",
            x.len(),
            g.dim()
        )));
    }
    let chol = Cholesky::new(g.cov.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?;
    let resid = x - &g.mean;
    let w = chol
        .l()
        .solve_lower_triangular(&resid)
        .ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
    Ok(-(x.len() as f64) * LN_SQRT_2PI - log_det - 0.5 * w.norm_squared())
}

/// `P(X <= upper)` using the default integrator with lattice tolerance `tol`.
pub fn mvn_cdf(upper: &DVector<f64>, g: &GaussianMoments, tol: f64) -> Result<CdfValue> {
    Integrator {
        lattice_tol: tol,
        ..Integrator::default()
    }
    .cdf(upper, g)
}

pub fn cdf_gradient(y: &DVector<f64>, g: &GaussianMoments) -> Result<DVector<f64>> {
    Integrator::default().gradient(y, g)
}

pub fn cdf_hessian(y: &DVector<f64>, g: &GaussianMoments) -> Result<DMatrix<f64>> {
    Integrator::default().hessian(y, g)
}

pub fn truncated_moments(y: &DVector<f64>, g: &GaussianMoments) -> Result<TruncatedMoments> {
    Integrator::default().truncated_moments(y, g)
}

pub fn cdf_param_gradient(
    y: &DVector<f64>,
    g: &GaussianMoments,
    dmu: &DMatrix<f64>,
    dsigma: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    Integrator::default()
        .cdf_with_param_gradient(y, g, dmu, dsigma)
        .map(|(_, grad)| grad)
}
