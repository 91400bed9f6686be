//! RSI, MACD and Williams %R over daily bars, plus assembly of the per-day
//! feature rows fed to the classifier.
//!
//! All indicators are index based: a period of 14 means 14 bars, not 14
//! calendar days. Outputs have the same length as the input with `None`
//! during warm-up.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::AdjustedBar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndicatorError {
    #[error("empty price series")]
    EmptySeries,
    #[error("series of {len} bars is too short, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("invalid indicator config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorConfig {
    pub rsi_period: usize,
    pub wr_period: usize,
    pub macd_fast: usize,
    pub macd_slow: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            rsi_period: 14,
            wr_period: 14,
            macd_fast: 12,
            macd_slow: 26,
        }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<(), IndicatorError> {
        let periods = [
            ("rsi_period", self.rsi_period),
            ("wr_period", self.wr_period),
            ("macd_fast", self.macd_fast),
            ("macd_slow", self.macd_slow),
        ];
        if let Some((name, p)) = periods.iter().find(|(_, p)| *p < 2) {
            return Err(IndicatorError::InvalidConfig(format!(
                "{name} = {p}, must be >= 2"
            )));
        }
        if self.macd_fast >= self.macd_slow {
            return Err(IndicatorError::InvalidConfig(format!(
                "macd_fast ({}) must be below macd_slow ({})",
                self.macd_fast, self.macd_slow
            )));
        }
        Ok(())
    }

    /// Index of the first bar at which every indicator is defined.
    pub fn warm_up(&self) -> usize {
        (self.macd_slow - 1)
            .max(self.rsi_period)
            .max(self.wr_period - 1)
    }
}

/// Indicator values for one trading day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub date: NaiveDate,
    pub close: f64,
    pub rsi: f64,
    pub williams_r: f64,
    pub macd: f64,
}

/// Exponential moving average with smoothing `2 / (period + 1)`, seeded by
/// the simple mean of the first `period` values.
pub fn ema(closes: &[f64], period: usize) -> Result<Vec<Option<f64>>, IndicatorError> {
    if closes.is_empty() {
        return Err(IndicatorError::EmptySeries);
    }
    if period == 0 {
        return Err(IndicatorError::InvalidConfig(
            "ema period must be positive".into(),
        ));
    }
    let mut out = vec![None; closes.len()];
    if closes.len() < period {
        return Ok(out);
    }
    let alpha = 2.0 / (period as f64 + 1.0);
    let seed = closes[..period].iter().sum::<f64>() / period as f64;
    out[period - 1] = Some(seed);
    let mut prev = seed;
    for (t, &c) in closes.iter().enumerate().skip(period) {
        prev = alpha * c + (1.0 - alpha) * prev;
        out[t] = Some(prev);
    }
    Ok(out)
}

fn rsi_from_averages(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 && avg_gain == 0.0 {
        50.0
    } else if avg_loss == 0.0 {
        100.0
    } else if avg_gain == 0.0 {
        0.0
    } else {
        let rs = avg_gain / avg_loss;
        (100.0 - 100.0 / (1.0 + rs)).clamp(0.0, 100.0)
    }
}

/// Relative strength index with Wilder smoothing. The first value is at
/// index `period`, computed from simple means of the first `period` changes.
pub fn rsi(closes: &[f64], period: usize) -> Result<Vec<Option<f64>>, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidConfig(
            "rsi period must be positive".into(),
        ));
    }
    if closes.len() <= period {
        return Err(IndicatorError::SeriesTooShort {
            len: closes.len(),
            needed: period + 1,
        });
    }
    let n = period as f64;
    let change = |t: usize| closes[t] - closes[t - 1];

    let mut avg_gain = (1..=period).map(|t| change(t).max(0.0)).sum::<f64>() / n;
    let mut avg_loss = (1..=period).map(|t| (-change(t)).max(0.0)).sum::<f64>() / n;

    let mut out = vec![None; closes.len()];
    out[period] = Some(rsi_from_averages(avg_gain, avg_loss));
    for (t, slot) in out.iter_mut().enumerate().skip(period + 1) {
        let d = change(t);
        avg_gain = (avg_gain * (n - 1.0) + d.max(0.0)) / n;
        avg_loss = (avg_loss * (n - 1.0) + (-d).max(0.0)) / n;
        *slot = Some(rsi_from_averages(avg_gain, avg_loss));
    }
    Ok(out)
}

/// Fast EMA minus slow EMA, defined where both are.
pub fn macd(closes: &[f64], cfg: &IndicatorConfig) -> Result<Vec<Option<f64>>, IndicatorError> {
    if closes.len() < cfg.macd_slow {
        return Err(IndicatorError::SeriesTooShort {
            len: closes.len(),
            needed: cfg.macd_slow,
        });
    }
    let fast = ema(closes, cfg.macd_fast)?;
    let slow = ema(closes, cfg.macd_slow)?;
    Ok(fast
        .into_iter()
        .zip(slow)
        .map(|(f, s)| Some(f? - s?))
        .collect())
}

/// Williams %R over a trailing window of `period` bars: where the close
/// sits inside the window's high-low range, 0 at the top and -100 at the
/// bottom. A flat window yields -50.
pub fn williams_r(bars: &[AdjustedBar], period: usize) -> Result<Vec<Option<f64>>, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidConfig(
            "williams %R period must be positive".into(),
        ));
    }
    if bars.len() < period {
        return Err(IndicatorError::SeriesTooShort {
            len: bars.len(),
            needed: period,
        });
    }
    let mut out = vec![None; bars.len()];
    for t in period - 1..bars.len() {
        let window = &bars[t + 1 - period..=t];
        let highest = window
            .iter()
            .map(|b| b.high)
            .fold(f64::NEG_INFINITY, f64::max);
        let lowest = window.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
        let close = bars[t].close;
        let value = if highest == lowest {
            -50.0
        } else {
            ((highest - close) / (highest - lowest) * -100.0).clamp(-100.0, 0.0)
        };
        out[t] = Some(value);
    }
    Ok(out)
}

/// One row per bar at which RSI, Williams %R and MACD are all defined.
/// Warm-up bars are dropped.
pub fn compute_feature_rows(
    bars: &[AdjustedBar],
    cfg: &IndicatorConfig,
) -> Result<Vec<FeatureRow>, IndicatorError> {
    cfg.validate()?;
    let first = cfg.warm_up();
    if bars.len() <= first {
        return Err(IndicatorError::SeriesTooShort {
            len: bars.len(),
            needed: first + 1,
        });
    }
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let rsi = rsi(&closes, cfg.rsi_period)?;
    let wr = williams_r(bars, cfg.wr_period)?;
    let macd = macd(&closes, cfg)?;

    let rows = (first..bars.len())
        .map(|t| FeatureRow {
            date: bars[t].date,
            close: closes[t],
            rsi: rsi[t].expect("rsi defined past warm-up"),
            williams_r: wr[t].expect("williams %R defined past warm-up"),
            macd: macd[t].expect("macd defined past warm-up"),
        })
        .collect();
    Ok(rows)
}

/// Debug export `Date,Close,RSI,WilliamsR,MACD`.
pub fn write_feature_csv<W: Write>(rows: &[FeatureRow], writer: W) -> Result<(), IndicatorError> {
    let io = |e: csv::Error| IndicatorError::Io(e.to_string());
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["Date", "Close", "RSI", "WilliamsR", "MACD"])
        .map_err(io)?;
    for r in rows {
        wtr.write_record([
            r.date.to_string(),
            r.close.to_string(),
            r.rsi.to_string(),
            r.williams_r.to_string(),
            r.macd.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| IndicatorError::Io(e.to_string()))
}
