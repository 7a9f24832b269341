//! Bivariate standard normal probabilities.
//!
//! Drezner–Wesolowsky reduction with Genz's double precision refinements:
//! Gauss–Legendre quadrature over the arcsine of the correlation for
//! moderate |r|, and an expansion around the singular point for |r| near 1.

#![allow(clippy::excessive_precision)]

use super::univariate::norm_cdf;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

// (weight, node) pairs of Gauss–Legendre rules on [-1, 1]; only one node of
// each symmetric pair is stored.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705e+00, -0.9324695142031522e+00),
    (0.3607615730481384e+00, -0.6612093864662647e+00),
    (0.4679139345726904e+00, -0.2386191860831970e+00),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191e+00),
    (0.1069393259953183e+00, -0.9041172563704750e+00),
    (0.1600783285433464e+00, -0.7699026741943050e+00),
    (0.2031674267230659e+00, -0.5873179542866171e+00),
    (0.2334925365383547e+00, -0.3678314989981802e+00),
    (0.2491470458134029e+00, -0.1252334085114692e+00),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949e+00),
    (0.4060142980038694e-01, -0.9639719272779138e+00),
    (0.6267204833410906e-01, -0.9122344282513259e+00),
    (0.8327674157670475e-01, -0.8391169718222188e+00),
    (0.1019301198172404e+00, -0.7463319064601508e+00),
    (0.1181945319615184e+00, -0.6360536807265150e+00),
    (0.1316886384491766e+00, -0.5108670019508271e+00),
    (0.1420961093183821e+00, -0.3737060887154196e+00),
    (0.1491729864726037e+00, -0.2277858511416451e+00),
    (0.1527533871307259e+00, -0.7652652113349733e-01),
];

fn rule(abs_r: f64) -> &'static [(f64, f64)] {
    if abs_r < 0.3 {
        &GL6
    } else if abs_r < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// Upper orthant probability P(X > dh, Y > dk) for standard normals with
/// correlation `r`.
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let quad = rule(r.abs());

    if r.abs() < 0.925 {
        let mut bvn = 0.0;
        if r != 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = r.asin();
            for &(w, x) in quad {
                for s in [x, -x] {
                    let sn = (0.5 * asr * (s + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (2.0 * TWO_PI);
        }
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let mut bvn = 0.0;
    if r.abs() < 1.0 {
        let a_sq = (1.0 - r) * (1.0 + r);
        let mut a = a_sq.sqrt();
        let b_sq = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-0.5 * (b_sq / a_sq + hk)).exp()
            * (1.0 - c * (b_sq - a_sq) * (1.0 - d * b_sq / 5.0) / 3.0 + c * d * a_sq * a_sq / 5.0);
        if hk > -160.0 {
            let b = b_sq.sqrt();
            bvn -= (-0.5 * hk).exp()
                * TWO_PI.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_sq * (1.0 - d * b_sq / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in quad {
            for s in [x, -x] {
                let xs = (a * (s + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (b_sq / xs + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * xs / (2.0 * (1.0 + rs).powi(2))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)
    }
}

/// Lower orthant probability P(X <= h, Y <= k) for standard normals with
/// correlation `r`. Infinite limits are allowed.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return norm_cdf(k);
    }
    if k == f64::INFINITY {
        return norm_cdf(h);
    }
    bvn_upper(-h, -k, r).clamp(0.0, 1.0)
}

/// Bivariate standard normal density with correlation `r`.
pub fn bvn_pdf(x: f64, y: f64, r: f64) -> f64 {
    let s = 1.0 - r * r;
    (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * s)).exp() / (TWO_PI * s.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn arcsine(r: f64) -> f64 {
        0.25 + r.asin() / TWO_PI
    }

    #[test]
    fn orthant_matches_arcsine_rule() {
        for i in -19..=19 {
            let r = i as f64 * 0.05;
            assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, r), arcsine(r), epsilon = 1e-14);
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        for &(h, k, r) in &[(0.3, -1.2, 0.4), (-2.0, 1.0, -0.95), (1.5, 0.2, 0.97)] {
            assert_abs_diff_eq!(bvn_cdf(h, k, r), bvn_cdf(k, h, r), epsilon = 1e-15);
        }
    }

    #[test]
    fn independence_and_limits() {
        assert_abs_diff_eq!(bvn_cdf(0.7, -0.4, 0.0), norm_cdf(0.7) * norm_cdf(-0.4), epsilon = 1e-15);
        assert_eq!(bvn_cdf(f64::NEG_INFINITY, 0.0, 0.5), 0.0);
        assert_abs_diff_eq!(bvn_cdf(f64::INFINITY, 0.3, 0.5), norm_cdf(0.3), epsilon = 1e-16);
    }

    #[test]
    fn complementary_correlations_sum_to_marginal() {
        // P(X<=h, Y<=k; r) + P(X<=h, Y>k; r) = Phi(h), and the second term
        // equals P(X<=h, -Y<-k; -r).
        for &(h, k, r) in &[(0.3, -1.2, 0.4), (-0.5, 0.8, 0.96), (1.1, 1.3, -0.93)] {
            let total = bvn_cdf(h, k, r) + bvn_cdf(h, -k, -r);
            assert_abs_diff_eq!(total, norm_cdf(h), epsilon = 1e-15);
        }
    }
}
