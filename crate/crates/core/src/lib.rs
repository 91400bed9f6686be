//! Stock trading signals from technical indicators and a small multilayer
//! perceptron, with a trade simulator and evaluation metrics.
//!
//! The pipeline per ticker is: load and adjust daily bars
//! ([`market_data`]), compute RSI, Williams %R and MACD ([`indicators`]),
//! label local extrema and split by date ([`dataset`]), train a classifier
//! ([`neuralnet`]), replay its predictions as trades ([`backtest`]) and score
//! them ([`metrics`]). [`pipeline`] wires the stages together on disk.

pub mod backtest;
pub mod config;
pub mod dataset;
pub mod indicators;
pub mod market_data;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod synthetic;

pub use backtest::{ExitReason, Ledger, PricePoint, Trade, TradingConfig};
pub use config::{ConfigError, RunConfig};
pub use dataset::{Label, LabeledSample, LabelerConfig, Normalizer, SplitSpec};
pub use indicators::{FeatureRow, IndicatorConfig};
pub use market_data::{AdjustedBar, OhlcvBar};
pub use metrics::{ConfusionMatrix, TradingStats};
pub use neuralnet::{MlpConfig, MlpModel, TrainingTrace};
pub use pipeline::{run_pipeline, PipelineError, RunSummary, Stage, StageOptions};

pub use chrono::NaiveDate;
