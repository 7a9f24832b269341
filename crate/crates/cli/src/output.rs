use serde_json::{json, Value};
use std::fmt::Write;
use tobitlvm::simulate::StudySummary;
use tobitlvm::FitResult;

pub fn fit_json(fit: &FitResult, blocks: Option<&[Vec<String>]>) -> Value {
    let parameters: Vec<Value> = (0..fit.dim())
        .map(|t| {
            json!({
                "name": fit.names[t],
                "group": fit.groups[t].title(),
                "estimate": fit.theta_hat[t],
                "se": fit.se[t],
                "z": fit.z[t],
                "p": fit.p[t],
            })
        })
        .collect();
    let vcov: Vec<Vec<f64>> = fit.vcov.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut doc = json!({
        "schema": 1,
        "estimator": if fit.composite { "composite" } else { "mle" },
        "converged": fit.converged,
        "iterations": fit.iterations,
        "gradient_norm": fit.gradient_norm,
        "loglik": fit.loglik,
        "n": fit.n,
        "parameters": parameters,
        "vcov": vcov,
    });
    if let Some(b) = blocks {
        doc["blocks"] = json!(b);
    }
    doc
}

fn shown<'a>(summary: &'a StudySummary, report: &'a [String]) -> impl Iterator<Item = &'a tobitlvm::simulate::ParameterSummary> {
    summary
        .parameters
        .iter()
        .filter(move |p| report.is_empty() || report.contains(&p.name))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.digits$}"))
}

pub fn study_table(summary: &StudySummary, report: &[String], n: usize) -> String {
    let mut s = String::new();
    let used = summary.reps - summary.failed;
    let _ = writeln!(s, "{} replications of n = {n} ({} failed)", summary.reps, summary.failed);
    let _ = writeln!(
        s,
        "{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>12}",
        "", "Truth", "Mean", "Variance", "Bias", "MSE", "Ave(SE)/SD"
    );
    for p in shown(summary, report) {
        let _ = writeln!(
            s,
            "{:<14} {:>9.4} {:>9.4} {:>9} {:>9.4} {:>9.4} {:>12}",
            p.name,
            p.truth,
            p.mean,
            opt(p.variance, 4),
            p.bias,
            p.mse,
            opt(p.se_ratio, 2)
        );
    }
    if used < 2 {
        let _ = writeln!(s, "variance and Ave(SE)/SD need at least two replications");
    }
    s
}

pub fn study_json(summary: &StudySummary, n: usize, composite: bool) -> Value {
    let parameters: Vec<Value> = summary
        .parameters
        .iter()
        .map(|p| {
            json!({
                "name": p.name,
                "truth": p.truth,
                "mean": p.mean,
                "variance": p.variance,
                "bias": p.bias,
                "mse": p.mse,
                "ave_se": p.ave_se,
                "se_ratio": p.se_ratio,
            })
        })
        .collect();
    json!({
        "schema": 1,
        "command": "study",
        "estimator": if composite { "composite" } else { "mle" },
        "reps": summary.reps,
        "failed": summary.failed,
        "n": n,
        "parameters": parameters,
    })
}
