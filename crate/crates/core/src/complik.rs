//! Composite marginal likelihood over blocks of manifest variables, with a
//! Godambe sandwich variance.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{finish, initial_values, invert_information, maximize, Evaluated, FitOptions, FitResult, Objective};
use crate::likelihood::{pairwise_sum, ObservationPattern, Prepared};
use crate::model::{Kind, ModelSpec, ParameterMap};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum BlockStrategy {
    /// Sliding windows over the binary and censored variables.
    Adjacent,
    /// Every subset of the given size of the binary and censored variables.
    AllPairs,
    /// Explicit blocks of variable names.
    Custom(Vec<Vec<String>>),
}

/// Blocks of manifest indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub blocks: Vec<Vec<usize>>,
}

impl BlockPlan {
    /// The single block of all manifest variables.
    pub fn full(spec: &ModelSpec) -> BlockPlan {
        BlockPlan {
            blocks: vec![(0..spec.manifest.len()).collect()],
        }
    }

    pub fn names(&self, spec: &ModelSpec) -> Vec<Vec<String>> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|&i| spec.manifest[i].clone()).collect())
            .collect()
    }

    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let p = spec.manifest.len();
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::Model("block plan has an empty block".into()));
        }
        if let Some(&i) = self.blocks.iter().flatten().find(|&&i| i >= p) {
            return Err(Error::Model(format!("block index {i} exceeds the {p} manifest variables")));
        }
        if let Some(i) = (0..p).find(|i| !self.blocks.iter().any(|b| b.contains(i))) {
            return Err(Error::Model(format!(
                "variable '{}' is in no block, so its parameters are not identified",
                spec.manifest[i]
            )));
        }
        Ok(())
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Builds blocks of `k` binary or censored variables. Continuous uncensored
/// variables are appended to every block.
pub fn build_blocks(spec: &ModelSpec, k: usize, strategy: &BlockStrategy) -> Result<BlockPlan> {
    if k == 0 {
        return Err(Error::Model("block size must be at least 1".into()));
    }
    let (split, whole): (Vec<usize>, Vec<usize>) =
        (0..spec.manifest.len()).partition(|&i| spec.kinds[i] != Kind::Continuous);
    let with_whole = |b: Vec<usize>| -> Vec<usize> {
        let mut b: Vec<usize> = b.into_iter().chain(whole.iter().copied()).collect();
        b.sort_unstable();
        b
    };
    let plan = match strategy {
        BlockStrategy::Custom(blocks) => BlockPlan {
            blocks: blocks
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|name| {
                            spec.manifest
                                .iter()
                                .position(|m| m == name)
                                .ok_or_else(|| Error::Model(format!("'{name}' is not a manifest variable")))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?,
        },
        _ if split.is_empty() => BlockPlan::full(spec),
        _ if k > split.len() => {
            return Err(Error::Model(format!(
                "block size {k} exceeds the {} binary or censored variables",
                split.len()
            )))
        }
        BlockStrategy::Adjacent => BlockPlan {
            blocks: split.windows(k).map(|w| with_whole(w.to_vec())).collect(),
        },
        BlockStrategy::AllPairs => BlockPlan {
            blocks: combinations(split.len(), k)
                .into_iter()
                .map(|c| with_whole(c.into_iter().map(|i| split[i]).collect()))
                .collect(),
        },
    };
    plan.validate(spec)?;
    Ok(plan)
}

struct Composite<'a> {
    prepared: Prepared<'a>,
    /// Row patterns restricted to each block.
    patterns: Vec<Vec<ObservationPattern>>,
}

impl<'a> Composite<'a> {
    fn new(pm: &'a ParameterMap, data: &Dataset, plan: &BlockPlan) -> Result<Self> {
        plan.validate(pm.spec())?;
        let prepared = Prepared::new(pm, data)?;
        let patterns = plan
            .blocks
            .iter()
            .map(|b| prepared.patterns().iter().map(|p| p.restrict(b)).collect())
            .collect();
        Ok(Composite { prepared, patterns })
    }

    /// Per-block, per-row contributions.
    fn parts(&self, theta: &[f64], want: bool) -> Result<Vec<Vec<(f64, Option<DVector<f64>>)>>> {
        let moments = self.prepared.moments(theta)?;
        self.patterns
            .iter()
            .map(|pats| self.prepared.contributions(&moments, pats, want))
            .collect()
    }
}

impl Objective for Composite<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        let parts = self.parts(theta, false)?;
        let per_block: Vec<f64> = parts
            .iter()
            .map(|rows| pairwise_sum(&rows.iter().map(|r| r.0).collect::<Vec<_>>()))
            .collect();
        Ok(pairwise_sum(&per_block))
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluated> {
        let d = self.prepared.parameter_map().dim();
        let n = self.prepared.n();
        let parts = self.parts(theta, true)?;
        let mut information = DMatrix::zeros(d, d);
        let mut per_row = DMatrix::zeros(n, d);
        let mut per_block = Vec::with_capacity(parts.len());
        for rows in &parts {
            let mut s = DMatrix::zeros(n, d);
            for (i, (_, g)) in rows.iter().enumerate() {
                s.set_row(i, &g.as_ref().expect("scores requested").transpose());
            }
            information += s.transpose() * &s;
            per_row += s;
            per_block.push(pairwise_sum(&rows.iter().map(|r| r.0).collect::<Vec<_>>()));
        }
        let meat = (parts.len() > 1).then(|| per_row.transpose() * &per_row);
        Ok(Evaluated {
            value: pairwise_sum(&per_block),
            gradient: per_row.row_sum().transpose(),
            information,
            meat,
        })
    }

    fn n(&self) -> usize {
        self.prepared.n()
    }
}

pub fn cl_loglik(pm: &ParameterMap, theta: &[f64], data: &Dataset, plan: &BlockPlan) -> Result<f64> {
    Composite::new(pm, data, plan)?.value(theta)
}

pub fn cl_score(pm: &ParameterMap, theta: &[f64], data: &Dataset, plan: &BlockPlan) -> Result<DVector<f64>> {
    Ok(Composite::new(pm, data, plan)?.evaluate(theta)?.gradient)
}

/// Maximizes the composite likelihood. Directions use the summed per-block
/// outer products `Î`; the variance is `Î⁻¹ Ĵ Î⁻¹` with `Ĵ` the outer product
/// of the per-row composite scores.
pub fn fit_cl(pm: &ParameterMap, data: &Dataset, plan: &BlockPlan, opts: &FitOptions) -> Result<FitResult> {
    let obj = Composite::new(pm, data, plan)?;
    if obj.n() == 0 {
        return Err(Error::Data("no rows with observed model variables".into()));
    }
    let start = initial_values(pm, data, opts)?;
    let opt = maximize(&obj, start, opts)?;
    invert_information(pm, &opt.at.information).map_err(|e| match e {
        Error::SingularInformation(msg) => {
            Error::SingularInformation(format!("{msg}; the block plan does not identify the model"))
        }
        e => e,
    })?;
    finish(pm, opt, obj.n(), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{numeric_gradient, relative_error};
    use crate::data::Status;
    use crate::estimate::fit_mle;
    use crate::likelihood::loglik;
    use crate::model::{compile, parse_model};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pm(text: &str) -> ParameterMap {
        compile(&parse_model(text).unwrap()).unwrap()
    }

    const CL: &str = "latent eta\nbinary Y1 Y2\ncensored right Y3\nY1 + Y2 + Y3 <- eta\neta <- X1 + X2";

    fn cl_data(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut cols = vec![Vec::new(); 5];
        let mut status = Vec::new();
        for _ in 0..n {
            let (x1, x2) = (z(), z());
            let eta = x1 + x2 + z();
            let y: Vec<f64> = (0..3).map(|_| eta + z()).collect();
            cols[0].push(f64::from(y[0] > 0.0));
            cols[1].push(f64::from(y[1] > 0.0));
            cols[2].push(y[2].min(1.5));
            status.push(if y[2] >= 1.5 { Status::Right } else { Status::Observed });
            cols[3].push(x1);
            cols[4].push(x2);
        }
        let mut d = Dataset::new(
            ["Y1", "Y2", "Y3", "X1", "X2"].iter().map(|s| s.to_string()).collect(),
            cols,
        )
        .unwrap();
        d.set_status("Y3", status).unwrap();
        d
    }

    #[test]
    fn block_construction() {
        let spec = parse_model(CL).unwrap();
        let adj = build_blocks(&spec, 2, &BlockStrategy::Adjacent).unwrap();
        assert_eq!(adj.names(&spec), vec![vec!["Y1", "Y2"], vec!["Y2", "Y3"]]);
        assert_eq!(build_blocks(&spec, 3, &BlockStrategy::Adjacent).unwrap(), BlockPlan::full(&spec));
        assert!(build_blocks(&spec, 4, &BlockStrategy::Adjacent).is_err());
        assert!(build_blocks(&spec, 0, &BlockStrategy::Adjacent).is_err());

        let spec = parse_model("latent eta\nbinary A B C D\nA + B + C + D + Z <- eta").unwrap();
        let pairs = build_blocks(&spec, 2, &BlockStrategy::AllPairs).unwrap();
        assert_eq!(pairs.blocks.len(), 6);
        assert!(pairs.blocks.iter().all(|b| b.len() == 3 && b.contains(&4)));
        let custom = BlockStrategy::Custom(vec![vec!["A".into(), "B".into()]]);
        assert!(build_blocks(&spec, 2, &custom).is_err());
        let bad = BlockStrategy::Custom(vec![vec!["Q".into()]]);
        assert!(build_blocks(&spec, 2, &bad).is_err());
    }

    #[test]
    fn single_full_block_is_the_likelihood() {
        let m = pm(CL);
        let d = cl_data(1, 150);
        let theta: Vec<f64> = m.default_values().iter().map(|v| v * 0.9 + 0.05).collect();
        let full = BlockPlan::full(m.spec());
        assert_eq!(cl_loglik(&m, &theta, &d, &full).unwrap(), loglik(&m, &theta, &d).unwrap());
    }

    #[test]
    fn independent_blocks_factorize() {
        let m = pm("binary A\ncensored left C\nA + C + Z <- X");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
        let n = 50;
        let cols: Vec<Vec<f64>> = vec![
            (0..n).map(|_| f64::from(z() > 0.0)).collect(),
            (0..n).map(|_| z().max(-0.5)).collect(),
            (0..n).map(|_| z()).collect(),
            (0..n).map(|_| z()).collect(),
        ];
        let status = cols[1].iter().map(|&v| if v == -0.5 { Status::Left } else { Status::Observed }).collect();
        let mut d = Dataset::new(["A", "C", "Z", "X"].iter().map(|s| s.to_string()).collect(), cols).unwrap();
        d.set_status("C", status).unwrap();
        let theta: Vec<f64> = (0..m.dim()).map(|t| 0.1 * t as f64 - 0.3).collect();
        let plan = BlockPlan {
            blocks: vec![vec![0], vec![1], vec![2]],
        };
        assert_relative_eq!(
            cl_loglik(&m, &theta, &d, &plan).unwrap(),
            loglik(&m, &theta, &d).unwrap(),
            max_relative = 1e-12
        );
        let doubled = BlockPlan {
            blocks: vec![vec![0], vec![1], vec![2], vec![0]],
        };
        let only_a = pm("binary A\nA <- X");
        let theta_a: Vec<f64> = only_a
            .names()
            .iter()
            .map(|n| theta[m.index_of(n).unwrap()])
            .collect();
        let extra = cl_loglik(&m, &theta, &d, &doubled).unwrap() - cl_loglik(&m, &theta, &d, &plan).unwrap();
        assert_relative_eq!(extra, loglik(&only_a, &theta_a, &d).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn composite_score_matches_finite_differences() {
        let m = pm(CL);
        let d = cl_data(3, 40);
        let spec = m.spec().clone();
        let plan = build_blocks(&spec, 2, &BlockStrategy::Adjacent).unwrap();
        let theta: Vec<f64> = m.default_values().iter().map(|v| v * 0.8 + 0.1).collect();
        let s = cl_score(&m, &theta, &d, &plan).unwrap();
        let num = numeric_gradient(|th| cl_loglik(&m, th, &d, &plan), &theta).unwrap();
        for t in 0..m.dim() {
            assert!(relative_error(s[t], num[t]) < 1e-6, "{}: {} vs {}", m.names()[t], s[t], num[t]);
        }
    }

    #[test]
    fn full_block_fit_matches_mle() {
        let m = pm(CL);
        let d = cl_data(4, 300);
        let mle = fit_mle(&m, &d, &FitOptions::default()).unwrap();
        let cl = fit_cl(&m, &d, &BlockPlan::full(m.spec()), &FitOptions::default()).unwrap();
        assert!(cl.composite && cl.converged);
        for t in 0..m.dim() {
            assert!((mle.theta_hat[t] - cl.theta_hat[t]).abs() < 1e-8);
            assert_relative_eq!(mle.se[t], cl.se[t], max_relative = 1e-8);
        }
    }

    #[test]
    fn pairwise_fit_has_sandwich_variance() {
        let m = pm(CL);
        let d = cl_data(5, 500);
        let plan = build_blocks(m.spec(), 2, &BlockStrategy::Adjacent).unwrap();
        let fit = fit_cl(&m, &d, &plan, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let sym = (&fit.vcov - fit.vcov.transpose()).amax();
        assert!(sym < 1e-12 * fit.vcov.amax());
        assert!(fit.vcov.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        let b = fit.theta_hat[fit.index_of("eta<-X1").unwrap()];
        assert!((b - 1.0).abs() < 4.0 * fit.se[fit.index_of("eta<-X1").unwrap()]);
    }

    #[test]
    fn uncovered_variables_are_refused() {
        let m = pm(CL);
        let d = cl_data(6, 50);
        let plan = BlockPlan { blocks: vec![vec![0, 1]] };
        assert!(matches!(fit_cl(&m, &d, &plan, &FitOptions::default()), Err(Error::Model(_))));
    }
}
