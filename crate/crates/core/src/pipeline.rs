//! End-to-end orchestration: ingest, prepare, train, backtest and evaluate
//! each ticker, then aggregate.
//!
//! Every stage reads its inputs from and writes its outputs to the ticker's
//! directory under `output_dir`, so running the stages one at a time yields
//! the same bytes as a full run. Ticker jobs share nothing mutable; the
//! aggregate is assembled in configured ticker order after all jobs finish.
//!
//! Per-ticker layout:
//!
//! | stage    | writes                                                        |
//! |----------|---------------------------------------------------------------|
//! | ingest   | `adjusted.csv`, `ingest.toml`                                 |
//! | prepare  | `features.csv`, `train.csv`, `train_resampled.csv`, `test.csv`, `normalizer.toml` |
//! | train    | `model.bin`, `trace.csv`                                      |
//! | backtest | `predictions.csv`, `trades.csv`, `trades.txt`, `equity.csv`   |
//! | evaluate | `confusion.csv`, `scores.csv`, `stats.toml`                   |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{self, BacktestError, Ledger, PricePoint};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{self, DatasetError, Label, LabeledSample, Normalizer};
use crate::indicators::{self, IndicatorError};
use crate::market_data::{self, AdjustedBar, MarketDataError, Provenance};
use crate::metrics::{self, MetricsError, TradingStats};
use crate::neuralnet::{MlpModel, NnError};

pub const AGGREGATE_CSV: &str = "report.csv";
pub const AGGREGATE_TABLE: &str = "report.txt";
pub const FAILURES_CSV: &str = "failures.csv";
/// Per-ticker record of the stage that failed; cleared by `ingest`.
pub const FAILURE_MARKER: &str = "failed.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Ingest,
    Prepare,
    Train,
    Backtest,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Ingest,
        Stage::Prepare,
        Stage::Train,
        Stage::Backtest,
        Stage::Evaluate,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Backtest => "backtest",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error("missing upstream artifact {0}")]
    MissingUpstreamArtifact(PathBuf),
    #[error("artifact {artifact} is older than its input {input}")]
    StaleArtifact { artifact: PathBuf, input: PathBuf },
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("no ticker completed ({failed} failed)")]
    NoTickersSucceeded { failed: usize },
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageOptions {
    /// Skip a stage whose outputs exist and are newer than its inputs.
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

/// Why a ticker did not complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickerFailure {
    pub ticker: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub succeeded: Vec<(String, TradingStats)>,
    pub failures: Vec<TickerFailure>,
}

impl RunSummary {
    /// 0 when every ticker completed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

pub fn ticker_dir(cfg: &RunConfig, ticker: &str) -> PathBuf {
    cfg.output_dir.join(ticker)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_upstream(path: &Path) -> Result<Vec<u8>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingUpstreamArtifact(path.to_path_buf()));
    }
    fs::read(path).map_err(io_err(path))
}

fn modified(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// With `resume`, decides whether existing outputs can be kept.
fn check_resume(
    opts: &StageOptions,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<bool, PipelineError> {
    if !opts.resume || outputs.iter().any(|o| !o.exists()) {
        return Ok(false);
    }
    let (oldest_output, oldest_path) = outputs
        .iter()
        .filter_map(|o| modified(o).map(|t| (t, o)))
        .min()
        .expect("outputs exist");
    for input in inputs {
        if let Some(t) = modified(input) {
            if t > oldest_output {
                return Err(PipelineError::StaleArtifact {
                    artifact: oldest_path.clone(),
                    input: input.clone(),
                });
            }
        }
    }
    Ok(true)
}

fn csv_bytes<F, E>(write: F) -> Result<Vec<u8>, PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    PipelineError: From<E>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn with_header(cfg: &RunConfig, ticker: &str, body: &[u8]) -> Vec<u8> {
    let mut out = format!("# ticker = \"{ticker}\"\n{}", cfg.ticker_provenance()).into_bytes();
    out.extend_from_slice(body);
    out
}

fn strip_comments(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.bytes().chain(std::iter::once(b'\n')))
        .collect()
}

// ---------------------------------------------------------------------------
// ingest

pub fn ingest(
    cfg: &RunConfig,
    ticker: &str,
    opts: &StageOptions,
) -> Result<StageOutcome, PipelineError> {
    let input = cfg.data_dir.join(format!("{ticker}.csv"));
    let dir = ticker_dir(cfg, ticker);
    let outputs = [dir.join("adjusted.csv"), dir.join("ingest.toml")];
    if !input.exists() {
        return Err(PipelineError::MissingInput(input));
    }
    if check_resume(opts, std::slice::from_ref(&input), &outputs)? {
        return Ok(StageOutcome::UpToDate);
    }
    let series = market_data::load_ticker(&input).map_err(|e| e.source)?;
    let body = csv_bytes(|buf| market_data::write_adjusted_csv(&series.bars, buf))?;
    write_file(&outputs[0], &body)?;
    let provenance = toml::to_string(&series.provenance).expect("provenance serializes");
    write_file(&outputs[1], provenance.as_bytes())?;
    Ok(StageOutcome::Ran)
}

pub fn read_provenance(cfg: &RunConfig, ticker: &str) -> Result<Provenance, PipelineError> {
    let path = ticker_dir(cfg, ticker).join("ingest.toml");
    let text = String::from_utf8_lossy(&read_upstream(&path)?).into_owned();
    toml::from_str(&text).map_err(|e| PipelineError::Io {
        path,
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// prepare

/// Normalized splits for one ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub features: Vec<indicators::FeatureRow>,
    pub normalizer: Normalizer,
    pub train: Vec<LabeledSample>,
    pub train_resampled: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Features, labels, date split, normalization fitted on the training
/// period, and minority resampling of the training set.
pub fn prepare_samples(bars: &[AdjustedBar], cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    let features = indicators::compute_feature_rows(bars, &cfg.indicator)?;
    let labels = dataset::label_extrema(&features, &cfg.labeler)?;
    let rows = dataset::attach_labels(&features, &labels);
    let (train_rows, test_rows) = match dataset::split_by_date(&rows, &cfg.split) {
        Ok(split) => split,
        Err(DatasetError::EmptySplit(side)) => {
            return Err(PipelineError::InsufficientHistory(format!(
                "no {side} data between the configured split dates"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let normalizer = dataset::fit_normalizer(&train_rows)?;
    let train = dataset::apply_normalizer(&normalizer, &train_rows);
    let test = dataset::apply_normalizer(&normalizer, &test_rows);
    let train_resampled = dataset::resample_minority(&train, cfg.mlp.seed)?;
    Ok(Prepared {
        features,
        normalizer,
        train,
        train_resampled,
        test,
    })
}

pub fn prepare(
    cfg: &RunConfig,
    ticker: &str,
    opts: &StageOptions,
) -> Result<StageOutcome, PipelineError> {
    let dir = ticker_dir(cfg, ticker);
    let input = dir.join("adjusted.csv");
    let outputs = [
        dir.join("features.csv"),
        dir.join("train.csv"),
        dir.join("train_resampled.csv"),
        dir.join("test.csv"),
        dir.join("normalizer.toml"),
    ];
    let raw = read_upstream(&input)?;
    if check_resume(opts, std::slice::from_ref(&input), &outputs)? {
        return Ok(StageOutcome::UpToDate);
    }
    let bars = market_data::adjust_bars(&market_data::parse_csv(raw.as_slice())?)?;
    let p = prepare_samples(&bars, cfg)?;

    write_file(
        &outputs[0],
        &csv_bytes(|b| indicators::write_feature_csv(&p.features, b))?,
    )?;
    write_file(
        &outputs[1],
        &csv_bytes(|b| dataset::write_samples_csv(&p.train, b))?,
    )?;
    write_file(
        &outputs[2],
        &csv_bytes(|b| dataset::write_samples_csv(&p.train_resampled, b))?,
    )?;
    write_file(
        &outputs[3],
        &csv_bytes(|b| dataset::write_samples_csv(&p.test, b))?,
    )?;
    write_file(&outputs[4], p.normalizer.to_toml().as_bytes())?;
    Ok(StageOutcome::Ran)
}

fn read_samples(path: &Path) -> Result<Vec<LabeledSample>, PipelineError> {
    Ok(dataset::read_samples_csv(read_upstream(path)?.as_slice())?)
}

// ---------------------------------------------------------------------------
// train

pub fn train(
    cfg: &RunConfig,
    ticker: &str,
    opts: &StageOptions,
) -> Result<StageOutcome, PipelineError> {
    let dir = ticker_dir(cfg, ticker);
    let input = dir.join("train_resampled.csv");
    let outputs = [dir.join("model.bin"), dir.join("trace.csv")];
    let samples = read_samples(&input)?;
    if check_resume(opts, std::slice::from_ref(&input), &outputs)? {
        return Ok(StageOutcome::UpToDate);
    }
    let model = MlpModel::init(&cfg.mlp)?;
    let (trained, trace) = model.train(&samples)?;
    write_file(&outputs[0], &trained.to_bytes())?;
    write_file(&outputs[1], trace.to_csv().as_bytes())?;
    Ok(StageOutcome::Ran)
}

// ---------------------------------------------------------------------------
// backtest

/// Dated actual and predicted labels on the test period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub date: NaiveDate,
    pub actual: Label,
    pub predicted: Label,
    pub raw_close: f64,
}

fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("Date,Actual,Predicted,RawClose\n");
    for p in preds {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.date,
            p.actual.code(),
            p.predicted.code(),
            p.raw_close
        ));
    }
    s
}

fn parse_predictions(bytes: &[u8], path: &Path) -> Result<Vec<Prediction>, PipelineError> {
    let bad = |line: usize| PipelineError::Io {
        path: path.to_path_buf(),
        message: format!("malformed prediction row {line}"),
    };
    let text = String::from_utf8_lossy(bytes);
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1));
            }
            let label = |s: &str| s.parse::<u8>().ok().and_then(Label::from_code);
            Ok(Prediction {
                date: f[0].parse().map_err(|_| bad(i + 1))?,
                actual: label(f[1]).ok_or_else(|| bad(i + 1))?,
                predicted: label(f[2]).ok_or_else(|| bad(i + 1))?,
                raw_close: f[3].parse().map_err(|_| bad(i + 1))?,
            })
        })
        .collect()
}

/// Reads a `Date,Label` CSV of hand-chosen signals.
pub fn read_label_csv(path: &Path) -> Result<Vec<(NaiveDate, Label)>, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |line: usize| PipelineError::Io {
        path: path.to_path_buf(),
        message: format!("malformed label row {line}"),
    };
    String::from_utf8_lossy(&bytes)
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (d, l) = line.split_once(',').ok_or_else(|| bad(i + 1))?;
            let date = d.trim().parse().map_err(|_| bad(i + 1))?;
            let label = l
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(Label::from_code)
                .ok_or_else(|| bad(i + 1))?;
            Ok((date, label))
        })
        .collect()
}

pub fn price_points(samples: &[LabeledSample]) -> Vec<PricePoint> {
    samples
        .iter()
        .map(|s| PricePoint {
            date: s.date,
            close: s.raw_close,
        })
        .collect()
}

fn equity_csv(strategy: &Ledger, bah: &Ledger) -> String {
    let mut s = String::from("Date,Strategy,BuyAndHold\n");
    for (a, b) in strategy.equity.iter().zip(&bah.equity) {
        s.push_str(&format!("{},{},{}\n", a.date, a.value, b.value));
    }
    s
}

/// Predicts the test period with the trained model, or takes labels from
/// `label_override` (a `Date,Label` file covering every test date), and
/// replays them through the simulator.
pub fn backtest(
    cfg: &RunConfig,
    ticker: &str,
    opts: &StageOptions,
    label_override: Option<&Path>,
) -> Result<StageOutcome, PipelineError> {
    let dir = ticker_dir(cfg, ticker);
    let model_path = dir.join("model.bin");
    let test_path = dir.join("test.csv");
    let outputs = [
        dir.join("predictions.csv"),
        dir.join("trades.csv"),
        dir.join("trades.txt"),
        dir.join("equity.csv"),
    ];
    let test = read_samples(&test_path)?;
    let mut inputs = vec![test_path.clone()];
    let predicted: Vec<Label> = match label_override {
        Some(path) => {
            inputs.push(path.to_path_buf());
            let given = read_label_csv(path)?;
            test.iter()
                .map(|s| {
                    given
                        .iter()
                        .find(|(d, _)| *d == s.date)
                        .map(|(_, l)| *l)
                        .ok_or_else(|| PipelineError::Io {
                            path: path.to_path_buf(),
                            message: format!("no label for {}", s.date),
                        })
                })
                .collect::<Result<_, _>>()?
        }
        None => {
            let model = MlpModel::from_bytes(&read_upstream(&model_path)?)?;
            inputs.push(model_path);
            test.iter()
                .map(|s| model.predict(&s.features))
                .collect::<Result<_, _>>()?
        }
    };
    if check_resume(opts, &inputs, &outputs)? {
        return Ok(StageOutcome::UpToDate);
    }

    let preds: Vec<Prediction> = test
        .iter()
        .zip(&predicted)
        .map(|(s, &p)| Prediction {
            date: s.date,
            actual: s.label,
            predicted: p,
            raw_close: s.raw_close,
        })
        .collect();
    let prices = price_points(&test);
    let ledger = backtest::simulate(&prices, &predicted, &cfg.trading)?;
    let bah = backtest::buy_and_hold(&prices, &cfg.trading)?;

    write_file(&outputs[0], predictions_csv(&preds).as_bytes())?;
    write_file(
        &outputs[1],
        &csv_bytes(|b| backtest::write_trades_csv(&ledger.trades, b))?,
    )?;
    write_file(&outputs[2], backtest::format_trade_log(&ledger).as_bytes())?;
    write_file(&outputs[3], equity_csv(&ledger, &bah).as_bytes())?;
    Ok(StageOutcome::Ran)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerReport {
    pub ticker: String,
    pub test_years: f64,
    pub confusion: metrics::ConfusionMatrix,
    pub scores: metrics::ClassScores,
    pub stats: TradingStats,
}

/// Recomputes statistics from the exported predictions and trade log.
pub fn evaluate_ticker(
    cfg: &RunConfig,
    ticker: &str,
    opts: &StageOptions,
) -> Result<StageOutcome, PipelineError> {
    let dir = ticker_dir(cfg, ticker);
    let pred_path = dir.join("predictions.csv");
    let trades_path = dir.join("trades.csv");
    let outputs = [
        dir.join("confusion.csv"),
        dir.join("scores.csv"),
        dir.join("stats.toml"),
    ];
    let preds = parse_predictions(&read_upstream(&pred_path)?, &pred_path)?;
    let trade_bytes = read_upstream(&trades_path)?;
    if check_resume(opts, &[pred_path, trades_path], &outputs)? {
        return Ok(StageOutcome::UpToDate);
    }

    let actual: Vec<Label> = preds.iter().map(|p| p.actual).collect();
    let predicted: Vec<Label> = preds.iter().map(|p| p.predicted).collect();
    let confusion = metrics::confusion(&actual, &predicted)?;
    let scores = metrics::scores(&confusion);

    let prices: Vec<PricePoint> = preds
        .iter()
        .map(|p| PricePoint {
            date: p.date,
            close: p.raw_close,
        })
        .collect();
    let trades = backtest::read_trades_csv(trade_bytes.as_slice(), &prices)?;
    let ledger = Ledger::from_trades(&prices, trades, cfg.trading.starting_capital)?;
    let bah = backtest::buy_and_hold(&prices, &cfg.trading)?;
    let test_years = metrics::span_years(prices[0].date, prices[prices.len() - 1].date);
    let stats = metrics::trading_stats(&ledger, &bah, test_years)?;

    let report = TickerReport {
        ticker: ticker.to_string(),
        test_years,
        confusion,
        scores,
        stats,
    };
    write_file(
        &outputs[0],
        &with_header(cfg, ticker, confusion.to_csv().as_bytes()),
    )?;
    write_file(
        &outputs[1],
        &with_header(cfg, ticker, scores.to_csv().as_bytes()),
    )?;
    let body = toml::to_string(&report).expect("report serializes");
    write_file(&outputs[2], &with_header(cfg, ticker, body.as_bytes()))?;
    Ok(StageOutcome::Ran)
}

pub fn read_ticker_report(cfg: &RunConfig, ticker: &str) -> Result<TickerReport, PipelineError> {
    let path = ticker_dir(cfg, ticker).join("stats.toml");
    let body = strip_comments(&read_upstream(&path)?);
    toml::from_str(&String::from_utf8_lossy(&body)).map_err(|e| PipelineError::Io {
        path,
        message: e.to_string(),
    })
}

fn read_failure(cfg: &RunConfig, ticker: &str) -> Option<TickerFailure> {
    let text = fs::read_to_string(ticker_dir(cfg, ticker).join(FAILURE_MARKER)).ok()?;
    toml::from_str(&text).ok()
}

/// Error text with the output directory stripped, so reports do not
/// depend on where they were written.
fn relative_message(cfg: &RunConfig, e: &PipelineError) -> String {
    let prefix = format!("{}{}", cfg.output_dir.display(), std::path::MAIN_SEPARATOR);
    e.to_string().replace(&prefix, "")
}

fn failures_csv(failures: &[TickerFailure]) -> String {
    let mut s = String::from("Share,Stage,Error\n");
    for f in failures {
        s.push_str(&format!(
            "{},{},\"{}\"\n",
            f.ticker,
            f.stage,
            f.message.replace('"', "'")
        ));
    }
    s
}

/// Writes `report.csv`, `report.txt` and `failures.csv` for the tickers
/// that produced a report, in configured order.
pub fn write_aggregate(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let mut succeeded = Vec::new();
    let mut failures = Vec::new();
    for t in &cfg.tickers {
        if let Some(f) = read_failure(cfg, t) {
            failures.push(f);
            continue;
        }
        match read_ticker_report(cfg, t) {
            Ok(r) => succeeded.push((t.clone(), r.stats)),
            Err(e) => failures.push(TickerFailure {
                ticker: t.clone(),
                stage: Stage::Evaluate,
                message: relative_message(cfg, &e),
            }),
        }
    }

    let header = cfg.run_provenance();
    let csv = format!("{header}{}", metrics::report_csv(&succeeded));
    write_file(&cfg.output_dir.join(AGGREGATE_CSV), csv.as_bytes())?;
    let mut table = format!("{header}{}", metrics::report_table(&succeeded));
    if let Some(avg) = metrics::average_stats(&succeeded) {
        table.push_str(&format!(
            "\naverage annualized return: {:.2}% (buy and hold {:.2}%)\n",
            avg.annualized_return, avg.bah_annualized_return
        ));
        table.push_str(&format!(
            "average CAGR: {:.2}% (buy and hold {:.2}%)\n",
            avg.annualized_return_cagr, avg.bah_annualized_return_cagr
        ));
        let beat = succeeded
            .iter()
            .filter(|(_, s)| s.annualized_return > s.bah_annualized_return)
            .count();
        table.push_str(&format!(
            "beat buy and hold: {beat} of {}\n",
            succeeded.len()
        ));
    }
    for f in &failures {
        table.push_str(&format!(
            "failed {} at {}: {}\n",
            f.ticker, f.stage, f.message
        ));
    }
    write_file(&cfg.output_dir.join(AGGREGATE_TABLE), table.as_bytes())?;
    write_file(
        &cfg.output_dir.join(FAILURES_CSV),
        failures_csv(&failures).as_bytes(),
    )?;
    Ok(RunSummary {
        succeeded,
        failures,
    })
}

// ---------------------------------------------------------------------------
// orchestration

/// Runs one stage for one ticker.
pub fn run_stage(
    cfg: &RunConfig,
    ticker: &str,
    stage: Stage,
    opts: &StageOptions,
) -> Result<StageOutcome, PipelineError> {
    match stage {
        Stage::Ingest => ingest(cfg, ticker, opts),
        Stage::Prepare => prepare(cfg, ticker, opts),
        Stage::Train => train(cfg, ticker, opts),
        Stage::Backtest => backtest(cfg, ticker, opts, None),
        Stage::Evaluate => evaluate_ticker(cfg, ticker, opts),
    }
}

/// Runs `stages` for every configured ticker on a pool of
/// `cfg.parallelism` workers. Results are in ticker order.
pub fn run_stages_for_all(
    cfg: &RunConfig,
    stages: &[Stage],
    opts: &StageOptions,
) -> Result<Vec<Result<(), TickerFailure>>, PipelineError> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| ConfigError(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        cfg.tickers
            .par_iter()
            .map(|ticker| {
                let marker = ticker_dir(cfg, ticker).join(FAILURE_MARKER);
                for &stage in stages {
                    if stage == Stage::Ingest {
                        if marker.exists() {
                            fs::remove_file(&marker).map_err(|e| TickerFailure {
                                ticker: ticker.clone(),
                                stage,
                                message: e.to_string(),
                            })?;
                        }
                    } else if let Some(f) = read_failure(cfg, ticker) {
                        return Err(f);
                    }
                    if let Err(e) = run_stage(cfg, ticker, stage, opts) {
                        let failure = TickerFailure {
                            ticker: ticker.clone(),
                            stage,
                            message: relative_message(cfg, &e),
                        };
                        let text = toml::to_string(&failure).expect("failure serializes");
                        // best effort: the failure is also returned
                        let _ = write_file(&marker, text.as_bytes());
                        return Err(failure);
                    }
                }
                Ok(())
            })
            .collect()
    }))
}

/// Full pipeline for every ticker followed by the aggregate report.
/// Per-ticker failures are collected, not propagated.
pub fn run_pipeline(cfg: &RunConfig, opts: &StageOptions) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    run_stages_for_all(cfg, &Stage::ALL, opts)?;
    let summary = write_aggregate(cfg)?;
    if summary.succeeded.is_empty() {
        return Err(PipelineError::NoTickersSucceeded {
            failed: summary.failures.len(),
        });
    }
    Ok(summary)
}
