//! Run configuration: one TOML file with a table per stage, plus dotted
//! `key=value` overrides for any leaf.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::TradingConfig;
use crate::dataset::{LabelerConfig, SplitSpec};
use crate::indicators::IndicatorConfig;
use crate::neuralnet::MlpConfig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub tickers: Vec<String>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub indicator: IndicatorConfig,
    pub labeler: LabelerConfig,
    pub split: SplitSpec,
    pub mlp: MlpConfig,
    pub trading: TradingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            tickers: Vec::new(),
            output_dir: PathBuf::from("out"),
            parallelism: 1,
            indicator: IndicatorConfig::default(),
            labeler: LabelerConfig::default(),
            split: SplitSpec::default(),
            mlp: MlpConfig::default(),
            trading: TradingConfig::default(),
        }
    }
}

/// TOML datetimes (unquoted `1997-01-01`) are turned into strings so they
/// deserialize as calendar dates.
fn normalize_datetimes(value: &mut toml::Value) {
    match value {
        toml::Value::Datetime(dt) => *value = toml::Value::String(dt.to_string()),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| normalize_datetimes(v)),
        toml::Value::Array(a) => a.iter_mut().for_each(normalize_datetimes),
        _ => {}
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("bad override key `{key}`")));
    }
    let (leaf, path) = parts.split_last().expect("non-empty");
    let mut table = root;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(leaf.to_string(), parse_override_value(raw));
    Ok(())
}

impl RunConfig {
    /// Parses a config document and applies `key=value` overrides in order.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<RunConfig, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut value = toml::Value::Table(table);
        normalize_datetimes(&mut value);
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |e: &dyn std::fmt::Display| ConfigError(e.to_string());
        if self.tickers.is_empty() {
            return Err(ConfigError("no tickers configured".into()));
        }
        if let Some(t) = self.tickers.iter().find(|t| {
            t.is_empty()
                || !t
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'))
        }) {
            return Err(ConfigError(format!("bad ticker symbol `{t}`")));
        }
        if self.parallelism == 0 {
            return Err(ConfigError("parallelism must be at least 1".into()));
        }
        self.indicator.validate().map_err(|e| err(&e))?;
        self.labeler.validate().map_err(|e| err(&e))?;
        self.split.validate().map_err(|e| err(&e))?;
        self.mlp.validate().map_err(|e| err(&e))?;
        if i64::try_from(self.mlp.seed).is_err() {
            return Err(ConfigError(format!(
                "seed {} does not fit a TOML integer",
                self.mlp.seed
            )));
        }
        self.trading.validate().map_err(|e| err(&e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Settings that determine per-ticker results, as commented TOML lines.
    /// Output location, worker count and the ticker list are left out so
    /// the header does not depend on how a run was scheduled.
    pub fn ticker_provenance(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for key in ["output_dir", "parallelism", "tickers"] {
            table.remove(key);
        }
        comment_block(&toml::to_string(&table).expect("table serializes"))
    }

    /// Like [`ticker_provenance`](Self::ticker_provenance) but keeps the
    /// ticker list, for aggregate reports.
    pub fn run_provenance(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for key in ["output_dir", "parallelism"] {
            table.remove(key);
        }
        comment_block(&toml::to_string(&table).expect("table serializes"))
    }
}

fn comment_block(text: &str) -> String {
    text.lines()
        .map(|l| {
            if l.is_empty() {
                "#\n".to_string()
            } else {
                format!("# {l}\n")
            }
        })
        .collect()
}
