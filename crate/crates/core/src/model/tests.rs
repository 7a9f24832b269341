use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) const MIXED_FACTOR: &str = "\
latent eta
binary Y2
censored right Y3
Y1 + Y2 + Y3 <- eta
eta <- X1 + X2
";

fn pm(text: &str) -> ParameterMap {
    compile(&parse_model(text).unwrap()).unwrap()
}

#[test]
fn example_model_parameters_follow_printout_groups() {
    let m = pm(MIXED_FACTOR);
    assert_eq!(m.dim(), 10);
    assert_eq!(
        m.names(),
        vec![
            "Y2<-eta", "Y3<-eta", "eta<-X1", "eta<-X2", "Y2", "Y3", "eta", "Y1~~Y1", "Y3~~Y3",
            "eta~~eta"
        ]
    );
    let groups: Vec<Group> = m.parameters().iter().map(|p| p.group).collect();
    assert_eq!(groups[0], Group::Measurements);
    assert_eq!(groups[3], Group::Regressions);
    assert_eq!(groups[6], Group::Intercepts);
    assert_eq!(groups[9], Group::ResidualVariances);
    assert_eq!(m.parameters()[7].display_name(), "Y1");
    assert_eq!(m.spec().kinds[1], Kind::Binary);
    assert_eq!(m.spec().kinds[2], Kind::Censored(Side::Right));
}

#[test]
fn all_fixed_model_has_no_parameters() {
    let m = pm("Y <- X @0.5\nY <- 1 @0\ncov(Y, Y) @2");
    assert_eq!(m.dim(), 0);
    let ms = m.implied_moments(&[], &[2.0]).unwrap();
    assert_relative_eq!(ms.xi[0], 1.0);
    assert_relative_eq!(ms.omega[(0, 0)], 2.0);
    assert_eq!(ms.dxi.ncols(), 0);
    let data = Dataset::new(vec!["Y".into(), "X".into()], vec![vec![1.0], vec![2.0]]).unwrap();
    assert!(starting_values(&m, &data).unwrap().is_empty());
}

#[test]
fn shared_labels_map_to_one_parameter() {
    let m = pm("latent eta\nY1 <- eta @1\nY2 <- eta @l\nY3 <- eta @l");
    let t = m.index_of("l").unwrap();
    assert_eq!(m.slots(t).len(), 2);
    assert_eq!(m.dim(), 1 + 1 + 2 + 4);
}

#[test]
fn label_fixed_twice_is_rejected() {
    let spec = parse_model("latent eta\nY1 <- eta @1\nY2 <- eta @l\nfix l = 1\nfix l = 2").unwrap();
    assert!(matches!(compile(&spec), Err(Error::Model(_))));
    let m = pm("latent eta\nY1 <- eta @1\nY2 <- eta @l\nfix l = 0.5");
    assert!(m.index_of("l").is_none());
    assert!(m.fixed_cells().any(|(_, v)| v == 0.5));
}

#[test]
fn mixed_label_between_variance_and_loading_is_rejected() {
    let spec = parse_model("latent eta\nY1 <- eta @1\nY2 <- eta @l\ncov(Y1, Y1) @l").unwrap();
    assert!(compile(&spec).is_err());
}

#[test]
fn structurally_singular_cycle_is_rejected() {
    let e = parse_model("latent a b\nY1 <- a\nY2 <- b\na <- b @1\nb <- a @1").unwrap_err();
    assert!(matches!(e, Error::Model(_)));
    assert!(parse_model("latent a b\nY1 <- a\nY2 <- b\na <- b\nb <- a").is_ok());
}

#[test]
fn one_factor_compound_symmetry() {
    let m = pm("latent eta\nY1 + Y2 + Y3 <- eta @1\neta <- 1 @0");
    assert_eq!(m.dim(), 6);
    let ms = m.implied_moments(&m.default_values(), &[]).unwrap();
    let expected = DMatrix::from_element(3, 3, 1.0) + DMatrix::identity(3, 3);
    assert_relative_eq!(ms.omega, expected, epsilon = 1e-14);
}

pub(crate) const PROBIT_FACTOR: &str = "\
latent eta
binary Y
Z1 <- eta @1
Z2 + Z3 + Z4 <- eta
Y <- eta + X
";

#[test]
fn simulation_design_moments_at_truth() {
    let m = pm(PROBIT_FACTOR);
    let mut theta = m.default_values();
    theta[m.index_of("Y<-X").unwrap()] = -0.5;
    let ms = m.implied_moments(&theta, &[0.7]).unwrap();
    // Y*, Z1..Z4 in declaration order of outcomes.
    assert_eq!(m.spec().manifest, vec!["Z1", "Z2", "Z3", "Z4", "Y"]);
    for j in 0..4 {
        assert_relative_eq!(ms.omega[(j, j)], 2.0, epsilon = 1e-14);
        for k in 0..j {
            assert_relative_eq!(ms.omega[(j, k)], 1.0, epsilon = 1e-14);
        }
    }
    assert_relative_eq!(ms.omega[(4, 4)], 2.0, epsilon = 1e-14);
    assert_relative_eq!(ms.xi[4], -0.35, epsilon = 1e-14);
}

fn central_difference(
    m: &ParameterMap,
    theta: &[f64],
    x: &[f64],
    t: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let h = 1e-4 * theta[t].abs().max(1.0);
    let eval = |s: f64| {
        let mut th = theta.to_vec();
        th[t] += s * h;
        m.implied_moments(&th, x).unwrap()
    };
    let (p2, p1, m1, m2) = (eval(2.0), eval(1.0), eval(-1.0), eval(-2.0));
    let dxi = (-&p2.xi + &p1.xi * 8.0 - &m1.xi * 8.0 + &m2.xi) / (12.0 * h);
    let dom = (-&p2.omega + &p1.omega * 8.0 - &m1.omega * 8.0 + &m2.omega) / (12.0 * h);
    (dxi, dom)
}

const RICH: &str = "\
latent eta1 eta2
binary B1
censored left C1
Y1 + Y2 + B1 <- eta1
Y3 + C1 <- eta2
eta2 <- eta1 + X1
eta1 <- X2
Y2 <- X1
cov(Y1, Y3)
cov(Y2, Y2) @v
cov(Y3, Y3) @v
slope Y2 <- eta1 * V
slope eta2 <- eta1 * W
";

fn assert_derivatives(m: &ParameterMap, theta: &[f64], x: &[f64]) {
    let ms = m.implied_moments(theta, x).unwrap();
    let p = m.n_manifest();
    for t in 0..m.dim() {
        let (dxi, dom) = central_difference(m, theta, x, t);
        for i in 0..p {
            let scale = dxi[i].abs().max(1.0);
            assert!(
                (ms.dxi[(i, t)] - dxi[i]).abs() <= 1e-6 * scale,
                "dxi[{i},{t}] analytic {} vs numeric {}",
                ms.dxi[(i, t)],
                dxi[i]
            );
            for j in 0..p {
                let num = dom[(i, j)];
                let ana = ms.domega[(i + j * p, t)];
                assert!(
                    (ana - num).abs() <= 1e-6 * num.abs().max(1.0),
                    "domega[{i},{j},{t}] analytic {ana} vs numeric {num}"
                );
            }
        }
    }
}

#[test]
fn derivatives_match_finite_differences_rich_model() {
    let m = pm(RICH);
    assert_eq!(m.spec().covariates, vec!["X1", "X2", "V", "W"]);
    let theta: Vec<f64> = (0..m.dim()).map(|t| 0.3 + 0.05 * t as f64).collect();
    assert_derivatives(&m, &theta, &[0.4, -1.1, 0.8, 1.3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivatives_match_finite_differences(
        raw in proptest::collection::vec(-0.6f64..0.6, 20),
        x in proptest::collection::vec(-1.5f64..1.5, 4),
    ) {
        let m = pm(RICH);
        let theta: Vec<f64> = raw[..m.dim()].to_vec();
        assert_derivatives(&m, &theta, &x);
    }

    #[test]
    fn omega_is_invariant_to_declaration_order(seed in 0u64..1000) {
        let a = pm("latent eta\nY1 <- eta @1\nY2 <- eta\nY3 <- eta\neta <- X\nY3 <- X");
        let b = pm("latent eta\nY3 <- X\neta <- X\nY3 <- eta\nY1 <- eta @1\nY2 <- eta");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let natural_a: Vec<f64> = a
            .parameters()
            .iter()
            .map(|p| {
                let u: f64 = StandardNormal.sample(&mut rng);
                if p.log_scale { 0.5 + u.abs() } else { u }
            })
            .collect();
        let natural_b: Vec<f64> = b
            .names()
            .iter()
            .map(|n| natural_a[a.index_of(n).unwrap()])
            .collect();
        let ta = a.internal(&natural_a).unwrap();
        let tb = b.internal(&natural_b).unwrap();
        let ma = a.implied_moments(&ta, &[0.3]).unwrap();
        let mb = b.implied_moments(&tb, &[0.3]).unwrap();
        let perm: Vec<usize> = a
            .spec()
            .manifest
            .iter()
            .map(|n| b.spec().manifest.iter().position(|o| o == n).unwrap())
            .collect();
        for i in 0..3 {
            prop_assert!((ma.xi[i] - mb.xi[perm[i]]).abs() < 1e-12);
            for j in 0..3 {
                prop_assert!((ma.omega[(i, j)] - mb.omega[(perm[i], perm[j])]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn compile_is_deterministic() {
    for _ in 0..5 {
        assert_eq!(pm(RICH), pm(RICH));
    }
}

#[test]
fn random_slope_doubles_loading_and_matches_simulation() {
    let m = pm("latent eta\nY1 <- eta @1\nY2 <- eta @0\neta <- 1 @0\nslope Y2 <- eta * V");
    let theta = m.default_values();
    let v = 2.0;
    let ms = m.implied_moments(&theta, &[v]).unwrap();
    // Loading of Y2 is 0 + 1·V = 2.
    assert_relative_eq!(ms.omega[(1, 1)], 4.0 + 1.0, epsilon = 1e-14);
    assert_relative_eq!(ms.omega[(0, 1)], 2.0, epsilon = 1e-14);

    // Independent draws of eta, eps and the outcome equations.
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = [0.0f64; 5];
    for _ in 0..n {
        let eta: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let y1 = eta + e1;
        let y2 = v * eta + e2;
        s[0] += y1;
        s[1] += y2;
        s[2] += y1 * y1;
        s[3] += y2 * y2;
        s[4] += y1 * y2;
    }
    let nf = n as f64;
    let (m1, m2) = (s[0] / nf, s[1] / nf);
    let c11 = s[2] / nf - m1 * m1;
    let c22 = s[3] / nf - m2 * m2;
    let c12 = s[4] / nf - m1 * m2;
    // Standard errors of sample (co)variances for Gaussian data.
    let se = |a: f64, b: f64, c: f64| ((a * b + c * c) / nf).sqrt();
    assert!((c11 - ms.omega[(0, 0)]).abs() < 4.0 * se(2.0, 2.0, 2.0));
    assert!((c22 - ms.omega[(1, 1)]).abs() < 4.0 * se(5.0, 5.0, 5.0));
    assert!((c12 - ms.omega[(0, 1)]).abs() < 4.0 * se(2.0, 5.0, 2.0));
}

#[test]
fn singular_structure_at_theta_is_an_error() {
    let m = pm("latent a b\nY1 <- a\nY2 <- b\na <- b\nb <- a");
    let mut theta = m.default_values();
    theta[m.index_of("a<-b").unwrap()] = 1.0;
    theta[m.index_of("b<-a").unwrap()] = 1.0;
    assert!(matches!(
        m.implied_moments(&theta, &[]),
        Err(Error::NearSingular { .. })
    ));
}

#[test]
fn starting_values_use_data_summaries() {
    let m = pm("latent eta\nbinary B\nY1 + Y2 + B <- eta\neta <- X");
    let data = Dataset::new(
        vec!["Y1".into(), "Y2".into(), "B".into(), "X".into()],
        vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![3.0, 3.0, 3.0, 3.0, 3.0],
            vec![0.0, 1.0, 1.0, 0.0, 1.0],
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
        ],
    )
    .unwrap();
    let start = starting_values(&m, &data).unwrap();
    let natural = m.natural(&start);
    assert!(natural.iter().all(|v| v.is_finite()));
    assert_relative_eq!(natural[m.index_of("Y2~~Y2").unwrap()], MIN_START_VARIANCE);
    assert_relative_eq!(natural[m.index_of("Y1~~Y1").unwrap()], 2.5);
    assert_relative_eq!(natural[m.index_of("Y2").unwrap()], 3.0);
    assert_eq!(natural[m.index_of("B").unwrap()], 0.0);
    assert_relative_eq!(natural[m.index_of("eta<-X").unwrap()], 1.0);
    let empty = data.select_rows(&[]);
    assert!(starting_values(&m, &empty).is_err());
}
