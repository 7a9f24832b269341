//! Separation-of-variables orthant probabilities for higher dimensions.
//!
//! The integrand is the sequential conditioning transform with variables
//! ordered so that the most constraining limits come first; the unit cube is
//! sampled with a randomly shifted rank-1 lattice (square roots of primes as
//! generators, tent periodization). Shifts are drawn from a seeded ChaCha
//! stream, so results are reproducible bit for bit.

use super::univariate::{inv_mills, norm_cdf, norm_quantile};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 30] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113,
];

const SHIFTS: usize = 12;

struct Ordered {
    chol: DMatrix<f64>,
    limits: Vec<f64>,
}

fn reorder(z: &[f64], r: &DMatrix<f64>) -> Result<Option<Ordered>> {
    let k = z.len();
    let mut z = z.to_vec();
    let mut r = r.clone();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..k {
            let mut s = 0.0;
            let mut ss = 0.0;
            for m in 0..i {
                s += l[(j, m)] * y[m];
                ss += l[(j, m)] * l[(j, m)];
            }
            let sd = (r[(j, j)] - ss).max(0.0).sqrt();
            let p = if sd > 0.0 { norm_cdf((z[j] - s) / sd) } else { 1.0 };
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            z.swap(i, best);
            r.swap_rows(i, best);
            r.swap_columns(i, best);
            l.swap_rows(i, best);
        }
        let mut ss = 0.0;
        for m in 0..i {
            ss += l[(i, m)] * l[(i, m)];
        }
        let d = r[(i, i)] - ss;
        if d <= 1e-14 {
            return Err(Error::NotPositiveDefinite(
                "correlation matrix is singular in the sequential transform".into(),
            ));
        }
        l[(i, i)] = d.sqrt();
        for j in i + 1..k {
            let mut s = r[(j, i)];
            for m in 0..i {
                s -= l[(j, m)] * l[(i, m)];
            }
            l[(j, i)] = s / l[(i, i)];
        }
        let mut s = 0.0;
        for m in 0..i {
            s += l[(i, m)] * y[m];
        }
        let v = (z[i] - s) / l[(i, i)];
        if norm_cdf(v) == 0.0 {
            return Ok(None);
        }
        y[i] = -inv_mills(v);
    }
    Ok(Some(Ordered { chol: l, limits: z }))
}

fn integrand(o: &Ordered, w: &[f64], y: &mut [f64]) -> f64 {
    let k = o.limits.len();
    let mut e = norm_cdf(o.limits[0] / o.chol[(0, 0)]);
    let mut f = e;
    for i in 1..k {
        if f == 0.0 {
            return 0.0;
        }
        y[i - 1] = norm_quantile((w[i - 1] * e).max(f64::MIN_POSITIVE));
        let mut s = 0.0;
        for j in 0..i {
            s += o.chol[(i, j)] * y[j];
        }
        e = norm_cdf((o.limits[i] - s) / o.chol[(i, i)]);
        f *= e;
    }
    f
}

/// Lower orthant probability of a standardized normal with correlation
/// matrix `r` at finite limits `z`. Returns (estimate, 3-sigma error).
pub(crate) fn lattice_orthant(
    z: &[f64],
    r: &DMatrix<f64>,
    abs_tol: f64,
    max_points: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let k = z.len();
    if k >= PRIMES.len() {
        return Err(Error::Dimension(format!(
            "orthant dimension {k} exceeds the supported maximum"
        )));
    }
    let ordered = match reorder(z, r)? {
        Some(o) => o,
        None => return Ok((0.0, 0.0)),
    };
    let dim = k - 1;
    let generators: Vec<f64> = PRIMES[..dim]
        .iter()
        .map(|&p| (p as f64).sqrt().fract())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; dim];
    let mut y = vec![0.0; k];
    let mut n = 256usize;
    loop {
        let shifts: Vec<Vec<f64>> = (0..SHIFTS)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut means = Vec::with_capacity(SHIFTS);
        for shift in &shifts {
            let mut acc = 0.0;
            for i in 1..=n {
                for j in 0..dim {
                    let u = (i as f64 * generators[j] + shift[j]).fract();
                    w[j] = (2.0 * u - 1.0).abs();
                }
                acc += integrand(&ordered, &w, &mut y);
                for v in w.iter_mut() {
                    *v = 1.0 - *v;
                }
                acc += integrand(&ordered, &w, &mut y);
            }
            means.push(acc / (2 * n) as f64);
        }
        let mean = means.iter().sum::<f64>() / SHIFTS as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
            / ((SHIFTS - 1) * SHIFTS) as f64;
        let err = 3.0 * var.sqrt();
        if err <= abs_tol || 4 * n * SHIFTS > max_points {
            return Ok((mean.clamp(0.0, 1.0), err));
        }
        n *= 2;
    }
}
