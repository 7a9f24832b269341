use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Objective value, gradient and the outer-product information used to
/// build ascent directions.
#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub information: DMatrix<f64>,
    /// Middle matrix of a sandwich variance, when it differs from
    /// `information`.
    pub meat: Option<DMatrix<f64>>,
}

pub(crate) trait Objective: Sync {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluated>;
    /// Number of independent units, used to scale the gradient tolerance.
    fn n(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Bhhh,
    /// Quasi-Newton with BFGS updates started from the outer-product
    /// information.
    Bfgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    pub max_iter: usize,
    /// Convergence requires `max|score| < gradient_tol * max(1, |loglik| / n)`.
    pub gradient_tol: f64,
    /// Convergence also requires a relative step below this.
    pub step_tol: f64,
    /// Internal-scale starting values; data-driven when absent.
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            method: Method::Bhhh,
            max_iter: 500,
            gradient_tol: 1e-6,
            step_tol: 1e-9,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Optimum {
    pub theta: Vec<f64>,
    pub at: Evaluated,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Largest change of any internal coordinate in one iteration.
const MAX_STEP: f64 = 4.0;

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn relative_step(step: &DVector<f64>, theta: &[f64]) -> f64 {
    step.iter()
        .zip(theta)
        .map(|(s, t)| s.abs() / t.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Solves `I d = g`, adding a ridge of `1e-8 tr(I)/d` (growing tenfold) when
/// `I` is not positive definite.
pub(crate) fn bhhh_direction(information: &DMatrix<f64>, gradient: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = information.clone().cholesky() {
        return ch.solve(gradient);
    }
    let d = information.nrows();
    let scale = (information.trace() / d as f64).abs().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-8 * scale;
    loop {
        let mut m = information.clone();
        for i in 0..d {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(gradient);
        }
        ridge *= 10.0;
    }
}

/// `I^-1`, regularized like [`bhhh_direction`].
pub(crate) fn inverse_or_ridge(information: &DMatrix<f64>) -> DMatrix<f64> {
    let d = information.nrows();
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        out.set_column(j, &bhhh_direction(information, &e));
    }
    out
}

/// Maximizes the objective from `start`.
pub(crate) fn maximize<O: Objective>(obj: &O, start: Vec<f64>, opts: &FitOptions) -> Result<Optimum> {
    let mut theta = start;
    let mut at = obj.evaluate(&theta).map_err(|e| match e {
        e @ Error::Row { .. } | e @ Error::Data(_) => e,
        _ => Error::NonFiniteStart,
    })?;
    if !at.value.is_finite() || at.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteStart);
    }
    let n = obj.n().max(1) as f64;
    let mut h_inv = match opts.method {
        Method::Bfgs => Some(inverse_or_ridge(&at.information)),
        Method::Bhhh => None,
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let tol = opts.gradient_tol * (at.value.abs() / n).max(1.0);
        let small_gradient = max_abs(&at.gradient) < tol;
        let mut direction = match &h_inv {
            Some(h) => h * &at.gradient,
            None => bhhh_direction(&at.information, &at.gradient),
        };
        let mut slope = at.gradient.dot(&direction);
        if slope <= 0.0 && h_inv.is_some() {
            h_inv = Some(inverse_or_ridge(&at.information));
            direction = bhhh_direction(&at.information, &at.gradient);
            slope = at.gradient.dot(&direction);
        }
        if small_gradient && relative_step(&direction, &theta) < opts.step_tol {
            converged = true;
            break;
        }
        if !(slope > 0.0) {
            converged = small_gradient;
            break;
        }
        // Gains this small cannot be resolved in the objective value.
        let noise = 64.0 * f64::EPSILON * at.value.abs().max(1.0);
        if slope <= noise && small_gradient {
            converged = true;
            break;
        }
        let largest = max_abs(&direction);
        let mut alpha = if largest > MAX_STEP { MAX_STEP / largest } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = theta
                .iter()
                .zip(direction.iter())
                .map(|(t, d)| t + alpha * d)
                .collect();
            if let Ok(v) = obj.value(&trial) {
                let unresolved = slope <= noise && v >= at.value - noise;
                if v.is_finite() && (v >= at.value + ARMIJO * alpha * slope || unresolved) {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            converged = small_gradient;
            break;
        };
        let next_at = match obj.evaluate(&next) {
            Ok(e) => e,
            Err(_) => {
                converged = small_gradient;
                break;
            }
        };
        iterations += 1;
        let step = DVector::from_iterator(next.len(), next.iter().zip(&theta).map(|(a, b)| a - b));
        if let Some(h) = h_inv.as_mut() {
            let y = &at.gradient - &next_at.gradient;
            let sy = step.dot(&y);
            if sy > 1e-10 * step.norm() * y.norm() {
                let rho = 1.0 / sy;
                let d = h.nrows();
                let left = DMatrix::identity(d, d) - &step * y.transpose() * rho;
                *h = &left * &*h * left.transpose() + &step * step.transpose() * rho;
            }
        }
        let step_small = relative_step(&step, &theta) < opts.step_tol;
        theta = next;
        at = next_at;
        let tol = opts.gradient_tol * (at.value.abs() / n).max(1.0);
        if step_small && max_abs(&at.gradient) < tol {
            converged = true;
            break;
        }
        log::debug!("iteration {iterations}: value {:.10}, max|gradient| {:.3e}", at.value, max_abs(&at.gradient));
    }
    Ok(Optimum {
        theta,
        at,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Concave quadratic with a diagonal outer-product information that
    /// differs from the Hessian.
    struct Quadratic {
        center: Vec<f64>,
        curvature: Vec<f64>,
        offset: f64,
        /// Amplitude of a rapidly oscillating perturbation of the value,
        /// standing in for summation rounding.
        jitter: f64,
        n: usize,
    }

    impl Quadratic {
        fn new(center: Vec<f64>, curvature: Vec<f64>) -> Self {
            Quadratic {
                center,
                curvature,
                offset: 0.0,
                jitter: 0.0,
                n: 1,
            }
        }
    }

    impl Objective for Quadratic {
        fn value(&self, theta: &[f64]) -> Result<f64> {
            let wiggle = self.jitter * (theta.iter().sum::<f64>() * 1e9).sin();
            Ok(self.offset + wiggle
                - 0.5
                    * theta
                    .iter()
                    .zip(&self.center)
                    .zip(&self.curvature)
                    .map(|((t, c), k)| k * (t - c).powi(2))
                    .sum::<f64>())
        }

        fn evaluate(&self, theta: &[f64]) -> Result<Evaluated> {
            let d = theta.len();
            let gradient = DVector::from_iterator(
                d,
                (0..d).map(|i| -self.curvature[i] * (theta[i] - self.center[i])),
            );
            let information = DMatrix::from_diagonal(&DVector::from_iterator(
                d,
                self.curvature.iter().map(|k| 1.3 * k),
            ));
            Ok(Evaluated {
                value: self.value(theta)?,
                gradient,
                information,
                meat: None,
            })
        }

        fn n(&self) -> usize {
            self.n
        }
    }

    #[test]
    fn both_methods_reach_the_maximum() {
        let q = Quadratic::new(vec![1.5, -2.0, 0.25], vec![2.0, 0.5, 10.0]);
        for method in [Method::Bhhh, Method::Bfgs] {
            let opts = FitOptions {
                method,
                gradient_tol: 1e-9,
                ..FitOptions::default()
            };
            let o = maximize(&q, vec![0.0; 3], &opts).unwrap();
            assert!(o.converged, "{method:?}");
            for (t, c) in o.theta.iter().zip(&q.center) {
                assert!((t - c).abs() < 1e-8, "{method:?}: {t} vs {c}");
            }
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let q = Quadratic::new(vec![100.0], vec![1.0]);
        let opts = FitOptions {
            max_iter: 2,
            ..FitOptions::default()
        };
        let o = maximize(&q, vec![0.0], &opts).unwrap();
        assert!(!o.converged);
        assert_eq!(o.iterations, 2);
    }

    #[test]
    fn converges_when_the_gain_is_below_rounding() {
        let q = Quadratic {
            offset: -1.5e4,
            jitter: 1e-11,
            n: 5000,
            ..Quadratic::new(vec![0.3, -0.7], vec![5000.0, 2000.0])
        };
        let o = maximize(&q, vec![0.0; 2], &FitOptions::default()).unwrap();
        assert!(o.converged);
        assert!(o.iterations < 100, "{}", o.iterations);
    }

    #[test]
    fn singular_information_gets_a_ridge() {
        let info = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let d = bhhh_direction(&info, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(d.iter().all(|v| v.is_finite()));
        assert!(d.dot(&DVector::from_vec(vec![1.0, 1.0])) > 0.0);
    }
}
