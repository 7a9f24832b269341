mod design;
mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use design::Design;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tobitlvm::check::score_check;
use tobitlvm::simulate::{run_study, simulate_with};
use tobitlvm::{
    build_blocks, compile, fit_cl, fit_mle, parse_model, starting_values, BlockPlan, BlockStrategy, CovariateLaw,
    Dataset, Error, FitOptions, FitResult, Method, ParameterMap, Prepared,
};

#[derive(Parser)]
#[command(name = "tobitlvm", version, about = "Latent variable models with binary and censored outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress tables and warnings.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum likelihood fit.
    Fit(FitArgs),
    /// Composite marginal likelihood fit.
    Clfit(ClfitArgs),
    /// Simulate a dataset from a model or design file.
    Simulate(SimulateArgs),
    /// Repeat simulate and fit, and summarize the estimates.
    Study(StudyArgs),
    /// Compare analytic scores with finite differences.
    ScoreCheck(ScoreCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bhhh,
    Bfgs,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON result file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gradient tolerance of the convergence test.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value = "bhhh")]
    method: MethodArg,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct ClfitArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// `adjacent`, `pairs`, or a file with one block of variable names per line.
    #[arg(long, default_value = "adjacent")]
    blocks: String,
    #[arg(long, default_value_t = 2)]
    block_size: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file; defaults to the design's model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// TOML design with parameter values and censoring.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n: Option<usize>,
    /// JSON summary file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit by composite likelihood with these blocks.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long, default_value_t = 2)]
    block_size: usize,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct ScoreCheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Model(String),
    Data(String),
    Numeric(String),
    Audit(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Model(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
            Failure::Audit(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Model(m) | Failure::Data(m) | Failure::Numeric(m) | Failure::Audit(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_data_error() {
            return Failure::Data(msg);
        }
        let inner = match &e {
            Error::Row { source, .. } => source.as_ref(),
            e => e,
        };
        match inner {
            Error::Syntax { .. } | Error::Model(_) | Error::NotNested(_) | Error::Dimension(_) => Failure::Model(msg),
            _ => Failure::Numeric(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_model(path: &Path) -> Result<ParameterMap, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    let spec = parse_model(&text).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    Ok(compile(&spec)?)
}

fn read_data(path: &Path) -> Result<Dataset, Failure> {
    Dataset::read_csv(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn fit_options(tol: Option<f64>, method: MethodArg, max_iter: Option<usize>) -> FitOptions {
    let mut opts = FitOptions {
        method: match method {
            MethodArg::Bhhh => Method::Bhhh,
            MethodArg::Bfgs => Method::Bfgs,
        },
        ..FitOptions::default()
    };
    if let Some(t) = tol {
        opts.gradient_tol = t;
    }
    if let Some(m) = max_iter {
        opts.max_iter = m;
    }
    opts
}

fn block_plan(pm: &ParameterMap, blocks: &str, k: usize) -> Result<BlockPlan, Failure> {
    let strategy = match blocks {
        "adjacent" => BlockStrategy::Adjacent,
        "pairs" => BlockStrategy::AllPairs,
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{path}: {e}")))?;
            BlockStrategy::Custom(
                text.lines()
                    .map(|l| l.split('#').next().unwrap_or(""))
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    })
                    .collect(),
            )
        }
    };
    Ok(build_blocks(pm.spec(), k, &strategy)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn report_fit(fit: &FitResult, out: Option<&Path>, json: serde_json::Value, quiet: bool) -> Outcome {
    if !quiet {
        println!("{fit}");
    }
    if let Some(path) = out {
        write_json(path, &json)?;
    }
    if fit.converged {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "optimizer did not converge after {} iterations (max |score| {:.3e}); results written anyway",
            fit.iterations, fit.gradient_norm
        )))
    }
}

fn cmd_fit(a: &FitArgs, quiet: bool) -> Outcome {
    let pm = read_model(&a.model)?;
    let data = read_data(&a.data)?;
    let fit = fit_mle(&pm, &data, &fit_options(a.tol, a.method, a.max_iter))?;
    report_fit(&fit, a.out.as_deref(), output::fit_json(&fit, None), quiet)
}

fn cmd_clfit(a: &ClfitArgs, quiet: bool) -> Outcome {
    let pm = read_model(&a.fit.model)?;
    let data = read_data(&a.fit.data)?;
    let plan = block_plan(&pm, &a.blocks, a.block_size)?;
    let fit = fit_cl(&pm, &data, &plan, &fit_options(a.fit.tol, a.fit.method, a.fit.max_iter))?;
    let names = plan.names(pm.spec());
    if !quiet {
        let shown: Vec<String> = names.iter().map(|b| format!("({})", b.join(","))).collect();
        println!("blocks: {}", shown.join(" "));
    }
    report_fit(&fit, a.fit.out.as_deref(), output::fit_json(&fit, Some(&names)), quiet)
}

struct Setup {
    pm: ParameterMap,
    design: Option<Design>,
}

fn setup(model: Option<&Path>, design: Option<&Path>) -> Result<Setup, Failure> {
    let design = design.map(Design::read).transpose().map_err(Failure::Usage)?;
    let model = model
        .map(Path::to_path_buf)
        .or_else(|| design.as_ref().and_then(|d| d.model.clone()))
        .ok_or_else(|| Failure::Usage("a model is required (--model or the design's 'model')".into()))?;
    Ok(Setup {
        pm: read_model(&model)?,
        design,
    })
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    let Setup { pm, design } = setup(a.model.as_deref(), a.design.as_deref())?;
    let (theta, censoring) = match &design {
        Some(d) => (d.theta(&pm).map_err(Failure::Model)?, d.censoring().map_err(Failure::Model)?),
        None => (pm.default_values(), Vec::new()),
    };
    let n = a.n.or(design.as_ref().and_then(|d| d.n)).unwrap_or(500);
    let data = simulate_with(&pm, &theta, n, &CovariateLaw::StandardNormal, &censoring, a.seed)?;
    match &a.out {
        Some(path) => data
            .write_csv(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => data
            .to_writer(std::io::stdout().lock())
            .map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn cmd_study(a: &StudyArgs, quiet: bool) -> Outcome {
    let Setup { pm, design } = setup(a.model.as_deref(), Some(&a.design))?;
    let design = design.expect("design given");
    let theta = design.theta(&pm).map_err(Failure::Model)?;
    let censoring = design.censoring().map_err(Failure::Model)?;
    let n = a.n.or(design.n).unwrap_or(500);
    let plan = a
        .blocks
        .as_deref()
        .map(|b| block_plan(&pm, b, a.block_size))
        .transpose()?;
    let opts = fit_options(a.tol, MethodArg::Bhhh, None);
    let truth = pm.natural(&theta);
    let summary = run_study(
        a.reps,
        a.seed,
        &truth,
        |seed| simulate_with(&pm, &theta, n, &CovariateLaw::StandardNormal, &censoring, seed),
        |data| match &plan {
            Some(plan) => fit_cl(&pm, data, plan, &opts),
            None => fit_mle(&pm, data, &opts),
        },
    )?;
    if !quiet {
        print!("{}", output::study_table(&summary, &design.report, n));
    }
    if let Some(path) = &a.out {
        write_json(path, &output::study_json(&summary, n, plan.is_some()))?;
    }
    Ok(())
}

fn cmd_score_check(a: &ScoreCheckArgs, quiet: bool) -> Outcome {
    let pm = read_model(&a.model)?;
    let data = read_data(&a.data)?;
    let theta = starting_values(&pm, &data)?;
    let prepared = Prepared::new(&pm, &data)?;
    let r = score_check(&prepared, &theta)?;
    let pass = r.max_relative_error <= a.tol;
    let parameter = pm.names()[r.worst_parameter].clone();
    if !quiet {
        println!(
            "max relative error {:.3e} (row {}, parameter {}) over {} rows: {}",
            r.max_relative_error,
            r.worst_row,
            parameter,
            r.rows_checked,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.out {
        write_json(
            path,
            &serde_json::json!({
                "schema": 1,
                "command": "score-check",
                "max_relative_error": r.max_relative_error,
                "worst_row": r.worst_row,
                "worst_parameter": parameter,
                "rows_checked": r.rows_checked,
                "tolerance": a.tol,
                "pass": pass,
            }),
        )?;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Audit(format!(
            "score audit failed: relative error {:.3e} exceeds {:.1e}",
            r.max_relative_error, a.tol
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.quiet),
        Command::Clfit(a) => cmd_clfit(a, cli.quiet),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Study(a) => cmd_study(a, cli.quiet),
        Command::ScoreCheck(a) => cmd_score_check(a, cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
