//! Command-line front end: `fit`, `select`, `simulate`, `backtest`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use igl::backtest::{
    load_ohlc, performance, rolling_backtest, BacktestConfig, StrategyKind,
};
use igl::interval::IntervalMatrix;
use igl::io::{
    read_interval_pair, read_interval_paired_columns, write_json, write_matrix_csv,
    BicPathEntryJson, EigenBoundsJson, FitJson, KktJson,
};
use igl::selection::{lambda_grid, select_lambda, DEFAULT_GRID_COUNT, DEFAULT_GRID_RATIO};
use igl::sim::{aggregate, run_replications, ExperimentConfig};
use igl::solver::{eigen_bounds_check, igl_fit, kkt_check, SolverConfig};
use igl::{bound_covariances, CovariancePair};

const EXIT_INPUT_ERROR: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "igl", version, about = "Interval graphical lasso toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the precision matrix of an interval panel at a fixed or auto-selected penalty.
    Fit(FitArgs),
    /// Fit a regularization path and emit the BIC selection table.
    Select(SelectArgs),
    /// Run a simulation experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Run the rolling-window portfolio backtest over an OHLC panel.
    Backtest(BacktestArgs),
}

#[derive(Args)]
struct IntervalInput {
    /// CSV of lower bounds (use with --upper).
    #[arg(long)]
    lower: Option<PathBuf>,
    /// CSV of upper bounds (use with --lower).
    #[arg(long)]
    upper: Option<PathBuf>,
    /// Single CSV with <name>_l/<name>_u column pairs.
    #[arg(long, conflicts_with_all = ["lower", "upper"])]
    input: Option<PathBuf>,
}

impl IntervalInput {
    fn load(&self) -> anyhow::Result<IntervalMatrix> {
        match (&self.lower, &self.upper, &self.input) {
            (Some(l), Some(u), None) => Ok(read_interval_pair(l, u)?),
            (None, None, Some(p)) => Ok(read_interval_paired_columns(p)?),
            _ => anyhow::bail!("provide either --lower and --upper, or --input"),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: IntervalInput,
    /// Penalty on the doubled-likelihood scale.
    #[arg(long, conflicts_with = "auto")]
    lambda: Option<f64>,
    /// Select lambda by BIC over a log-spaced grid.
    #[arg(long)]
    auto: bool,
    /// Duality-gap tolerance (default 1e-6 * p).
    #[arg(long)]
    eps: Option<f64>,
    /// Cap on full block-coordinate sweeps.
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "igl-out")]
    out: PathBuf,
    /// Exit with code 3 if the solver does not converge.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = DEFAULT_GRID_COUNT)]
    grid_count: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_RATIO)]
    grid_ratio: f64,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: IntervalInput,
    #[arg(long, default_value_t = DEFAULT_GRID_COUNT)]
    grid_count: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_RATIO)]
    grid_ratio: f64,
    /// Refit every lambda from the cold start instead of warm-starting.
    #[arg(long)]
    cold: bool,
    #[arg(long, default_value = "igl-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config JSON.
    config: PathBuf,
    #[arg(long, default_value = "igl-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    /// Long-format OHLC CSV: date,ticker,open,high,low,close.
    ohlc: PathBuf,
    /// Comma-separated strategies (1/N, close, high, low, mid, interval); default all six.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long, default_value_t = 252)]
    est_window: usize,
    #[arg(long, default_value_t = 21)]
    hold: usize,
    /// Restrict the backtest to the last N trading days.
    #[arg(long)]
    span: Option<usize>,
    #[arg(long, default_value_t = 20)]
    grid_count: usize,
    #[arg(long, default_value = "igl-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Select(args) => cmd_select(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Backtest(args) => cmd_backtest(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

fn write_manifest(out: &Path, config_desc: &str, master_seed: Option<u64>) -> anyhow::Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(config_desc.as_bytes());
    let manifest = serde_json::json!({
        "config_hash": format!("{:x}", hasher.finalize()),
        "master_seed": master_seed,
        "tool_version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn load_cov(input: &IntervalInput) -> anyhow::Result<(IntervalMatrix, CovariancePair)> {
    let x = input.load()?;
    let cov = bound_covariances(&x)?;
    Ok((x, cov))
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<ExitCode> {
    let (x, cov) = load_cov(&args.input)?;
    fs::create_dir_all(&args.out)?;
    let labels: Vec<String> = x
        .labels()
        .map(|l| l.to_vec())
        .unwrap_or_else(|| (0..x.p()).map(|j| format!("v{j}")).collect());

    let mut json;
    let fit;
    if args.auto {
        let grid = lambda_grid(&cov.pooled, args.grid_count, args.grid_ratio);
        let mut cfg = SolverConfig::new(grid.values[0]);
        cfg.epsilon = args.eps;
        if let Some(ms) = args.max_sweeps {
            cfg.max_sweeps = ms;
        }
        let path = select_lambda(&cov, &grid.values, cov.n, &cfg)?;
        fit = path.selected().clone();
        json = FitJson::from_fit(&fit);
        json.selected_lambda = Some(path.selected_lambda());
        json.bic_path = Some(
            path.entries
                .iter()
                .enumerate()
                .map(|(i, e)| BicPathEntryJson {
                    lambda: e.lambda,
                    bic: e.bic,
                    k: e.k,
                    gap: e.fit.as_ref().map(|f| f.gap),
                    sweeps: e.fit.as_ref().map(|f| f.sweeps),
                    selected: i == path.selected_index,
                })
                .collect(),
        );
    } else {
        let lambda = args
            .lambda
            .ok_or_else(|| anyhow::anyhow!("provide --lambda or --auto"))?;
        let mut cfg = SolverConfig::new(lambda);
        cfg.epsilon = args.eps;
        if let Some(ms) = args.max_sweeps {
            cfg.max_sweeps = ms;
        }
        fit = igl_fit(&cov, &cfg)?;
        json = FitJson::from_fit(&fit);
    }

    let kkt = kkt_check(&fit, &cov, fit.lambda, 1e-8);
    let bounds = eigen_bounds_check(&fit, &cov, fit.lambda);
    json.kkt = Some(KktJson::from(&kkt));
    json.eigen_bounds = Some(EigenBoundsJson::from(&bounds));

    write_matrix_csv(&args.out.join("theta.csv"), &labels, &fit.theta_hat)?;
    write_matrix_csv(&args.out.join("sigma.csv"), &labels, &fit.sigma_hat)?;
    write_json(&args.out.join("fit.json"), &json)?;
    write_manifest(&args.out, &format!("fit lambda={} auto={}", fit.lambda, args.auto), None)?;

    if args.strict && !fit.converged {
        eprintln!("solver did not converge: gap {} after {} sweeps", fit.gap, fit.sweeps);
        return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_select(args: SelectArgs) -> anyhow::Result<ExitCode> {
    let (_, cov) = load_cov(&args.input)?;
    fs::create_dir_all(&args.out)?;
    let grid = lambda_grid(&cov.pooled, args.grid_count, args.grid_ratio);
    let cfg = SolverConfig::new(grid.values[0]);
    let path = igl::selection::select_lambda_with(&cov, &grid.values, cov.n, &cfg, !args.cold)?;

    let mut writer = csv::Writer::from_path(args.out.join("path.csv"))?;
    writer.write_record(["lambda", "bic", "k", "gap", "sweeps", "selected"])?;
    for (i, e) in path.entries.iter().enumerate() {
        writer.write_record([
            format!("{:.12e}", e.lambda),
            e.bic.map(|b| format!("{b:.6}")).unwrap_or_default(),
            e.k.map(|k| k.to_string()).unwrap_or_default(),
            e.fit.as_ref().map(|f| format!("{:.6e}", f.gap)).unwrap_or_default(),
            e.fit.as_ref().map(|f| f.sweeps.to_string()).unwrap_or_default(),
            if i == path.selected_index { "1".into() } else { "0".to_string() },
        ])?;
    }
    writer.flush()?;
    write_manifest(&args.out, &format!("select count={} ratio={}", args.grid_count, args.grid_ratio), None)?;
    println!("selected lambda = {}", path.selected_lambda());
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let config_text = fs::read_to_string(&args.config)?;
    let cfg: ExperimentConfig = serde_json::from_str(&config_text)
        .map_err(|e| anyhow::anyhow!("malformed config {}: {e}", args.config.display()))?;
    fs::create_dir_all(&args.out)?;

    let out = run_replications(&cfg);

    let mut long = csv::Writer::from_path(args.out.join("long.csv"))?;
    long.write_record([
        "structure", "dgp", "dist", "n", "p", "c", "rep", "spectral", "l1", "fro", "tpr",
        "fpr", "lambda_selected",
    ])?;
    for r in &out.records {
        long.write_record([
            r.structure.clone(),
            r.dgp.clone(),
            r.dist.clone(),
            r.n.to_string(),
            r.p.to_string(),
            format!("{}", r.c),
            r.rep.to_string(),
            format!("{:.12e}", r.spectral),
            format!("{:.12e}", r.l1),
            format!("{:.12e}", r.fro),
            format!("{:.6}", r.tpr),
            format!("{:.6}", r.fpr),
            format!("{:.12e}", r.lambda_selected),
        ])?;
    }
    long.flush()?;

    let mut tables = csv::Writer::from_path(args.out.join("tables.csv"))?;
    tables.write_record([
        "structure", "dgp", "dist", "n", "p", "c", "reps", "spectral_mean", "spectral_sd",
        "l1_mean", "l1_sd", "fro_mean", "fro_sd", "tpr_mean", "fpr_mean",
    ])?;
    for s in aggregate(&out.records) {
        tables.write_record([
            s.structure.clone(),
            s.dgp.clone(),
            s.dist.clone(),
            s.n.to_string(),
            s.p.to_string(),
            format!("{}", s.c),
            s.reps.to_string(),
            format!("{:.4}", s.spectral_mean),
            format!("{:.4}", s.spectral_sd),
            format!("{:.4}", s.l1_mean),
            format!("{:.4}", s.l1_sd),
            format!("{:.4}", s.fro_mean),
            format!("{:.4}", s.fro_sd),
            format!("{:.4}", s.tpr_mean),
            format!("{:.4}", s.fpr_mean),
        ])?;
    }
    tables.flush()?;

    let mut failures = csv::Writer::from_path(args.out.join("failures.csv"))?;
    failures.write_record(["structure", "dgp", "dist", "n", "p", "c", "rep", "error"])?;
    for f in &out.failures {
        failures.write_record([
            f.structure.clone(),
            f.dgp.clone(),
            f.dist.clone(),
            f.n.to_string(),
            f.p.to_string(),
            format!("{}", f.c),
            f.rep.to_string(),
            f.error.clone(),
        ])?;
    }
    failures.flush()?;

    write_manifest(&args.out, &config_text, Some(cfg.master_seed))?;
    println!(
        "{} replications, {} failures",
        out.records.len(),
        out.failures.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_backtest(args: BacktestArgs) -> anyhow::Result<ExitCode> {
    let mut panel = load_ohlc(&args.ohlc)?;
    for w in &panel.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(span) = args.span {
        let t = panel.dates.len();
        if span < t {
            let start = t - span;
            panel.dates = panel.dates.split_off(start);
            panel.open = panel.open.rows(start, span).into_owned();
            panel.high = panel.high.rows(start, span).into_owned();
            panel.low = panel.low.rows(start, span).into_owned();
            panel.close = panel.close.rows(start, span).into_owned();
        }
    }
    fs::create_dir_all(&args.out)?;

    let strategies: Vec<StrategyKind> = match &args.strategies {
        None => StrategyKind::ALL.to_vec(),
        Some(s) => s
            .split(',')
            .map(|name| {
                StrategyKind::parse(name.trim())
                    .ok_or_else(|| anyhow::anyhow!("unknown strategy {name:?}"))
            })
            .collect::<Result<_, _>>()?,
    };

    let cfg = BacktestConfig {
        est_window: args.est_window,
        hold: args.hold,
        grid_count: args.grid_count,
        ..Default::default()
    };

    let mut comparison = csv::Writer::from_path(args.out.join("comparison.csv"))?;
    comparison.write_record([
        "strategy", "sharpe", "return", "vol", "pooled_sharpe", "pooled_return", "pooled_vol",
        "windows",
    ])?;

    for strategy in &strategies {
        let report = rolling_backtest(&panel, *strategy, &cfg)?;
        let perf = performance(&report)?;

        let tag = strategy.name().replace('/', "_");
        write_json(&args.out.join(format!("report_{tag}.json")), &report)?;

        let mut weights = csv::Writer::from_path(args.out.join(format!("weights_{tag}.csv")))?;
        let mut header = vec!["start_date".to_string(), "end_date".to_string()];
        header.extend(panel.tickers.iter().cloned());
        weights.write_record(&header)?;
        for w in &report.windows {
            let mut row = vec![w.start_date.to_string(), w.end_date.to_string()];
            row.extend(w.weights.iter().map(|v| format!("{v:.12e}")));
            weights.write_record(&row)?;
        }
        weights.flush()?;

        comparison.write_record([
            strategy.name().to_string(),
            perf.ann_sharpe_mean.map(|s| format!("{s:.4}")).unwrap_or_default(),
            format!("{:.4}", perf.ann_return_mean),
            format!("{:.4}", perf.ann_vol_mean),
            perf.pooled_ann_sharpe.map(|s| format!("{s:.4}")).unwrap_or_default(),
            format!("{:.4}", perf.pooled_ann_return),
            format!("{:.4}", perf.pooled_ann_vol),
            perf.blocks.to_string(),
        ])?;
    }
    comparison.flush()?;
    write_manifest(
        &args.out,
        &format!(
            "backtest est={} hold={} span={:?} strategies={:?}",
            args.est_window,
            args.hold,
            args.span,
            strategies.iter().map(|s| s.name()).collect::<Vec<_>>()
        ),
        None,
    )?;
    Ok(ExitCode::SUCCESS)
}
