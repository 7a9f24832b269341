use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimate::FitResult;
use rayon::prelude::*;

/// Monte Carlo summary of one parameter, in the columns of a simulation
/// table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    /// Monte Carlo variance of the estimates; absent with one replication.
    pub variance: Option<f64>,
    pub bias: f64,
    pub mse: f64,
    /// Average reported standard error.
    pub ave_se: f64,
    /// `ave_se` over the Monte Carlo standard deviation.
    pub se_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub reps: usize,
    /// Replications that failed or did not converge; excluded from the
    /// summaries.
    pub failed: usize,
    pub parameters: Vec<ParameterSummary>,
    /// Natural-scale estimates of each used replication.
    pub estimates: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
}

impl StudySummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Seed of replication `rep`, independent of the order replications run in.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `reps` replications of `simulate` followed by `estimate` and
/// summarizes the estimates against `truth` (natural scale, aligned with the
/// estimator's parameters).
pub fn run_study<S, E>(reps: usize, seed: u64, truth: &[f64], simulate: S, estimate: E) -> Result<StudySummary>
where
    S: Fn(u64) -> Result<Dataset> + Sync,
    E: Fn(&Dataset) -> Result<FitResult> + Sync,
{
    if reps == 0 {
        return Err(Error::Model("a study needs at least one replication".into()));
    }
    let fits: Vec<Option<FitResult>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = simulate(replication_seed(seed, r)).ok()?;
            match estimate(&data) {
                Ok(fit) if fit.converged => Some(fit),
                Ok(_) => {
                    log::warn!("replication {r} did not converge");
                    None
                }
                Err(e) => {
                    log::warn!("replication {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let used: Vec<FitResult> = fits.into_iter().flatten().collect();
    let failed = reps - used.len();
    let Some(first) = used.first() else {
        return Err(Error::Model("every replication failed".into()));
    };
    if truth.len() != first.dim() {
        return Err(Error::Dimension(format!(
            "expected {} true values, got {}",
            first.dim(),
            truth.len()
        )));
    }
    let names = first.names.clone();
    let k = used.len() as f64;
    let parameters = names
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let est: Vec<f64> = used.iter().map(|f| f.theta_hat[t]).collect();
            let mean = est.iter().sum::<f64>() / k;
            let variance = (used.len() > 1)
                .then(|| est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0));
            let ave_se = used.iter().map(|f| f.se[t]).sum::<f64>() / k;
            ParameterSummary {
                name: name.clone(),
                truth: truth[t],
                mean,
                variance,
                bias: mean - truth[t],
                mse: est.iter().map(|v| (v - truth[t]).powi(2)).sum::<f64>() / k,
                ave_se,
                se_ratio: variance.filter(|v| *v > 0.0).map(|v| ave_se / v.sqrt()),
            }
        })
        .collect();
    Ok(StudySummary {
        reps,
        failed,
        parameters,
        estimates: used.iter().map(|f| f.theta_hat.clone()).collect(),
        standard_errors: used.iter().map(|f| f.se.clone()).collect(),
    })
}
