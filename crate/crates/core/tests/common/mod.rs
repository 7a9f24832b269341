//! Independent reference implementations used by the acceptance suite.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tobitlvm::{compile, parse_model, Dataset, ParameterMap};

pub fn pm(text: &str) -> ParameterMap {
    compile(&parse_model(text).expect("model parses")).expect("model compiles")
}

/// Internal parameters of `m` with the given natural values and defaults
/// elsewhere.
pub fn theta_from(m: &ParameterMap, values: &[(&str, f64)]) -> Vec<f64> {
    let mut v = m.natural(&m.default_values());
    for (name, x) in values {
        v[m.index_of(name).unwrap_or_else(|| panic!("no parameter {name}"))] = *x;
    }
    m.internal(&v).expect("valid natural values")
}

pub fn dataset(names: &[&str], columns: Vec<Vec<f64>>) -> Dataset {
    Dataset::new(names.iter().map(|s| s.to_string()).collect(), columns).expect("dataset")
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn big_phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_density(v: f64, mean: f64, var: f64) -> f64 {
    phi((v - mean) / var.sqrt()) / var.sqrt()
}

/// Newton-Raphson on the probit log-likelihood with the exact Hessian.
pub fn probit_oracle(y: &[f64], x: &[f64]) -> Vector2<f64> {
    let mut b = Vector2::zeros();
    for _ in 0..100 {
        let mut g = Vector2::zeros();
        let mut h = Matrix2::zeros();
        for i in 0..y.len() {
            let q = 2.0 * y[i] - 1.0;
            let u = q * (b[0] + b[1] * x[i]);
            let l = phi(u) / big_phi(u);
            let v = Vector2::new(1.0, x[i]);
            g += v * (q * l);
            h -= v * v.transpose() * (l * (u + l));
        }
        let step = h.lu().solve(&g).expect("probit Hessian is invertible");
        b -= step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    b
}

/// Newton-Raphson for the right-censored Tobit model in Olsen's
/// parameterization `(δ, h) = (β/σ, 1/σ)`. Returns `(β0, β1, σ²)`.
pub fn tobit_oracle(y: &[f64], censored: &[bool], x: &[f64]) -> Vector3<f64> {
    let mut p = Vector3::new(0.0, 0.0, 1.0);
    for _ in 0..200 {
        let mut g = Vector3::zeros();
        let mut hess = Matrix3::zeros();
        for i in 0..y.len() {
            let xd = p[0] + p[1] * x[i];
            let v = Vector3::new(1.0, x[i], -y[i]);
            if censored[i] {
                let u = xd - p[2] * y[i];
                let l = phi(u) / big_phi(u);
                g += v * l;
                hess -= v * v.transpose() * (l * (u + l));
            } else {
                let r = p[2] * y[i] - xd;
                g += Vector3::new(r, r * x[i], 1.0 / p[2] - r * y[i]);
                hess -= v * v.transpose();
                hess[(2, 2)] -= 1.0 / (p[2] * p[2]);
            }
        }
        let mut step = hess.lu().solve(&g).expect("Tobit Hessian is invertible");
        while p[2] - step[2] <= 0.0 {
            step *= 0.5;
        }
        p -= step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    Vector3::new(p[0] / p[2], p[1] / p[2], 1.0 / (p[2] * p[2]))
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}
