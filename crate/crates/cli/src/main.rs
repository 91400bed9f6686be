use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neurotrade::config::RunConfig;
use neurotrade::market_data;
use neurotrade::pipeline::{self, PipelineError, Stage, StageOptions, TickerFailure};
use neurotrade::synthetic;
use neurotrade::NaiveDate;

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "neurotrade",
    version,
    about = "Indicator-driven MLP trading signals and backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and adjust raw price files.
    Ingest(Common),
    /// Compute features, label, split, normalize and resample.
    Prepare(Common),
    /// Train one model per ticker.
    Train(Common),
    /// Predict the test period and simulate trading.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// `Date,Label` CSV used instead of model predictions (single ticker only).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score predictions and trades, then write the aggregate report.
    Evaluate(Common),
    /// All stages followed by the aggregate report.
    Run(Common),
    /// Write synthetic price files for trying the pipeline out.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated ticker symbols, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    tickers: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Seed for weight initialization, shuffling and resampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of `<TICKER>.csv` price files.
    #[arg(long, env = "NEUROTRADE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Override any config leaf, e.g. `--set mlp.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Keep artifacts that are newer than their inputs.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Walk,
    Sine,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write `<TICKER>.csv` files into.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "AAA,BBB")]
    tickers: Vec<String>,
    #[arg(long, value_enum, default_value = "walk")]
    kind: SynthKind,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "1996-01-01")]
    from: NaiveDate,
    #[arg(long, default_value = "2017-01-31")]
    to: NaiveDate,
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(&common.config)
        .with_context(|| format!("cannot read {}", common.config.display()))?;
    let mut overrides = Vec::new();
    for kv in &common.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("override `{kv}` is not KEY=VALUE");
        };
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut cfg = RunConfig::from_toml_with_overrides(&text, &overrides)?;
    if let Some(dir) = &common.data_dir {
        cfg.data_dir = dir.clone();
    }
    if let Some(t) = &common.tickers {
        cfg.tickers = t.iter().map(|s| s.trim().to_string()).collect();
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(p) = common.parallelism {
        cfg.parallelism = p;
    }
    if let Some(seed) = common.seed {
        cfg.mlp.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_failures(failures: &[TickerFailure]) {
    for f in failures {
        eprintln!("{}: {} failed: {}", f.ticker, f.stage, f.message);
    }
}

fn run_stage_command(cfg: &RunConfig, stage: Stage, opts: &StageOptions) -> anyhow::Result<u8> {
    let results = pipeline::run_stages_for_all(cfg, &[stage], opts)?;
    let failures: Vec<TickerFailure> = results.into_iter().filter_map(Result::err).collect();
    if stage == Stage::Evaluate {
        let summary = pipeline::write_aggregate(cfg)?;
        report_failures(&summary.failures);
        println!(
            "{} of {} tickers reported; see {}",
            summary.succeeded.len(),
            cfg.tickers.len(),
            cfg.output_dir.join(pipeline::AGGREGATE_TABLE).display()
        );
        return Ok(summary.exit_code() as u8);
    }
    report_failures(&failures);
    println!(
        "{stage}: {} of {} tickers ok",
        cfg.tickers.len() - failures.len(),
        cfg.tickers.len()
    );
    Ok(if failures.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn run_backtest_with_labels(
    cfg: &RunConfig,
    labels: &Path,
    opts: &StageOptions,
) -> anyhow::Result<u8> {
    let [ticker] = cfg.tickers.as_slice() else {
        bail!("--labels needs exactly one ticker");
    };
    pipeline::backtest(cfg, ticker, opts, Some(labels))?;
    println!("backtest: {ticker} ok");
    Ok(0)
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&args.dir)
        .with_context(|| format!("cannot create {}", args.dir.display()))?;
    let dates = synthetic::business_days(args.from, args.to);
    for (i, ticker) in args.tickers.iter().enumerate() {
        let bars = match args.kind {
            SynthKind::Walk => synthetic::random_walk_bars(
                args.seed + i as u64,
                &dates,
                20.0 + 10.0 * i as f64,
                0.015,
            ),
            SynthKind::Sine => synthetic::sine_bars(&dates, 100.0, 5.0, 100.0, 7.0 * i as f64),
        };
        let path = args.dir.join(format!("{ticker}.csv"));
        let file =
            fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        market_data::write_csv(&bars, file)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<u8> {
    let (common, stage, labels) = match command {
        Command::Synth(args) => {
            synth(&args)?;
            return Ok(0);
        }
        Command::Ingest(c) => (c, Some(Stage::Ingest), None),
        Command::Prepare(c) => (c, Some(Stage::Prepare), None),
        Command::Train(c) => (c, Some(Stage::Train), None),
        Command::Backtest { common, labels } => (common, Some(Stage::Backtest), labels),
        Command::Evaluate(c) => (c, Some(Stage::Evaluate), None),
        Command::Run(c) => (c, None, None),
    };
    let cfg = match load_config(&common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(EXIT_CONFIG);
        }
    };
    let opts = StageOptions {
        resume: common.resume,
    };
    match (stage, labels) {
        (Some(Stage::Backtest), Some(path)) => run_backtest_with_labels(&cfg, &path, &opts),
        (Some(stage), _) => run_stage_command(&cfg, stage, &opts),
        (None, _) => match pipeline::run_pipeline(&cfg, &opts) {
            Ok(summary) => {
                report_failures(&summary.failures);
                print!(
                    "{}",
                    fs::read_to_string(cfg.output_dir.join(pipeline::AGGREGATE_TABLE))?
                );
                Ok(summary.exit_code() as u8)
            }
            Err(PipelineError::NoTickersSucceeded { failed }) => {
                let path = cfg.output_dir.join(pipeline::FAILURES_CSV);
                eprint!("{}", fs::read_to_string(path).unwrap_or_default());
                eprintln!("error: no ticker completed ({failed} failed)");
                Ok(EXIT_PARTIAL)
            }
            Err(e @ PipelineError::ConfigInvalid(_)) => {
                eprintln!("error: {e}");
                Ok(EXIT_CONFIG)
            }
            Err(e) => Err(e.into()),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
