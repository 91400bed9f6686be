//! Classification scores and per-ticker trading statistics.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::Ledger;
use crate::dataset::Label;

/// Minimum span, in calendar days, for an annualized return. A full year
/// of daily bars runs from the first to the last trading day of the year,
/// which is a few days short of 365.
pub const MIN_ANNUALIZE_SPAN_DAYS: i64 = 350;

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{actual} actual labels but {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("equity path spans {days} days, need at least {MIN_ANNUALIZE_SPAN_DAYS}")]
    SpanTooShort { days: i64 },
    #[error("test_years must be positive")]
    InvalidYears,
}

/// Rows are actual classes, columns predicted, both indexed by label code.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|c| self.counts[c][c]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("actual\\predicted,0,1,2\n");
        for (a, row) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{a},{},{},{}", row[0], row[1], row[2]);
        }
        s
    }
}

pub fn confusion(actual: &[Label], predicted: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (a, p) in actual.iter().zip(predicted) {
        m.counts[a.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scores(m: &ConfusionMatrix) -> ClassScores {
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    for c in 0..3 {
        let col: u64 = (0..3).map(|a| m.counts[a][c]).sum();
        let row: u64 = m.counts[c].iter().sum();
        precision[c] = ratio(m.counts[c][c], col);
        recall[c] = ratio(m.counts[c][c], row);
        let (p, r) = (precision[c], recall[c]);
        f1[c] = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
    }
    ClassScores {
        precision,
        recall,
        f1,
        accuracy: ratio(m.trace(), m.total()),
    }
}

impl ClassScores {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,hold,buy,sell\n");
        for (name, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            let _ = writeln!(s, "{name},{},{},{}", v[0], v[1], v[2]);
        }
        let _ = writeln!(s, "accuracy,{},,", self.accuracy);
        s
    }
}

/// Mean of calendar-year simple returns. Each year's return runs from the
/// previous year's closing equity (or `start_capital` for the first year)
/// to the last equity value dated in that year.
pub fn annualize(
    start_capital: f64,
    equity_path: &[(NaiveDate, f64)],
) -> Result<f64, MetricsError> {
    let (first, last) = match (equity_path.first(), equity_path.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(MetricsError::SpanTooShort { days: 0 }),
    };
    let days = (last - first).num_days();
    if days < MIN_ANNUALIZE_SPAN_DAYS {
        return Err(MetricsError::SpanTooShort { days });
    }
    let mut returns = Vec::new();
    let mut year_start = start_capital;
    let mut i = 0;
    while i < equity_path.len() {
        let year = equity_path[i].0.year();
        while i + 1 < equity_path.len() && equity_path[i + 1].0.year() == year {
            i += 1;
        }
        let year_end = equity_path[i].1;
        returns.push(year_end / year_start - 1.0);
        year_start = year_end;
        i += 1;
    }
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

/// Compound annual growth over the path's calendar span.
pub fn cagr(start_capital: f64, equity_path: &[(NaiveDate, f64)]) -> Result<f64, MetricsError> {
    let (first, last) = match (equity_path.first(), equity_path.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(MetricsError::SpanTooShort { days: 0 }),
    };
    let days = (last.0 - first.0).num_days();
    if days < MIN_ANNUALIZE_SPAN_DAYS {
        return Err(MetricsError::SpanTooShort { days });
    }
    Ok((last.1 / start_capital).powf(DAYS_PER_YEAR / days as f64) - 1.0)
}

/// Years covered by a dated series, first to last date.
pub fn span_years(first: NaiveDate, last: NaiveDate) -> f64 {
    (last - first).num_days() as f64 / DAYS_PER_YEAR
}

/// Trading statistics for one ticker. Percentages are in percent units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradingStats {
    pub final_capital: f64,
    pub bah_final_capital: f64,
    pub annualized_return: f64,
    pub bah_annualized_return: f64,
    pub annualized_return_cagr: f64,
    pub bah_annualized_return_cagr: f64,
    pub annualized_transactions: f64,
    pub percent_success: f64,
    pub avg_profit_per_transaction_pct: f64,
    pub avg_transaction_length_bars: f64,
    pub max_profit_pct: f64,
    pub max_loss_pct: f64,
    pub max_capital: f64,
    pub trade_count: usize,
    /// Set when the strategy made no trades; per-trade statistics are zero.
    pub no_trades: bool,
}

pub fn trading_stats(
    ledger: &Ledger,
    bah: &Ledger,
    test_years: f64,
) -> Result<TradingStats, MetricsError> {
    if test_years.is_nan() || test_years <= 0.0 {
        return Err(MetricsError::InvalidYears);
    }
    let path = ledger.equity_path();
    let bah_path = bah.equity_path();
    let trades = &ledger.trades;
    let n = trades.len();
    let pct: Vec<f64> = trades.iter().map(|t| t.profit_pct * 100.0).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let lengths: Vec<f64> = trades
        .iter()
        .map(|t| (t.exit_index - t.entry_index) as f64)
        .collect();
    let max_capital = path
        .iter()
        .map(|p| p.1)
        .fold(ledger.starting_capital, f64::max);

    Ok(TradingStats {
        final_capital: ledger.final_capital,
        bah_final_capital: bah.final_capital,
        annualized_return: annualize(ledger.starting_capital, &path)? * 100.0,
        bah_annualized_return: annualize(bah.starting_capital, &bah_path)? * 100.0,
        annualized_return_cagr: cagr(ledger.starting_capital, &path)? * 100.0,
        bah_annualized_return_cagr: cagr(bah.starting_capital, &bah_path)? * 100.0,
        annualized_transactions: n as f64 / test_years,
        percent_success: if n == 0 {
            0.0
        } else {
            100.0 * trades.iter().filter(|t| t.profit > 0.0).count() as f64 / n as f64
        },
        avg_profit_per_transaction_pct: mean(&pct),
        avg_transaction_length_bars: mean(&lengths),
        max_profit_pct: pct.iter().copied().reduce(f64::max).unwrap_or(0.0),
        max_loss_pct: pct.iter().copied().reduce(f64::min).unwrap_or(0.0),
        max_capital,
        trade_count: n,
        no_trades: n == 0,
    })
}

/// Column order of the aggregate report.
pub const REPORT_COLUMNS: [&str; 12] = [
    "Share", "OUR", "BaH", "OURr", "BaHr", "AnT", "PoS", "ApT", "L", "MpT", "MlT", "MxC",
];

fn report_cells(share: &str, s: &TradingStats) -> [String; 12] {
    [
        share.to_string(),
        format!("{:.2}", s.final_capital),
        format!("{:.2}", s.bah_final_capital),
        format!("{:.2}", s.annualized_return),
        format!("{:.2}", s.bah_annualized_return),
        format!("{:.1}", s.annualized_transactions),
        format!("{:.2}", s.percent_success),
        format!("{:.2}", s.avg_profit_per_transaction_pct),
        format!("{:.1}", s.avg_transaction_length_bars),
        format!("{:.2}", s.max_profit_pct),
        format!("{:.2}", s.max_loss_pct),
        format!("{:.2}", s.max_capital),
    ]
}

/// Column-wise mean over tickers.
pub fn average_stats(rows: &[(String, TradingStats)]) -> Option<TradingStats> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&TradingStats) -> f64| rows.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
    Some(TradingStats {
        final_capital: avg(|s| s.final_capital),
        bah_final_capital: avg(|s| s.bah_final_capital),
        annualized_return: avg(|s| s.annualized_return),
        bah_annualized_return: avg(|s| s.bah_annualized_return),
        annualized_return_cagr: avg(|s| s.annualized_return_cagr),
        bah_annualized_return_cagr: avg(|s| s.bah_annualized_return_cagr),
        annualized_transactions: avg(|s| s.annualized_transactions),
        percent_success: avg(|s| s.percent_success),
        avg_profit_per_transaction_pct: avg(|s| s.avg_profit_per_transaction_pct),
        avg_transaction_length_bars: avg(|s| s.avg_transaction_length_bars),
        max_profit_pct: avg(|s| s.max_profit_pct),
        max_loss_pct: avg(|s| s.max_loss_pct),
        max_capital: avg(|s| s.max_capital),
        trade_count: rows.iter().map(|(_, s)| s.trade_count).sum(),
        no_trades: rows.iter().all(|(_, s)| s.no_trades),
    })
}

/// Aggregate report as CSV, one row per ticker followed by an `Average`
/// row.
pub fn report_csv(rows: &[(String, TradingStats)]) -> String {
    let mut s = REPORT_COLUMNS.join(",");
    s.push('\n');
    for (share, stats) in rows {
        s.push_str(&report_cells(share, stats).join(","));
        s.push('\n');
    }
    if let Some(avg) = average_stats(rows) {
        s.push_str(&report_cells("Average", &avg).join(","));
        s.push('\n');
    }
    s
}

/// Same content as [`report_csv`], aligned for reading.
pub fn report_table(rows: &[(String, TradingStats)]) -> String {
    let mut table: Vec<Vec<String>> = vec![REPORT_COLUMNS.iter().map(|c| c.to_string()).collect()];
    for (share, stats) in rows {
        table.push(report_cells(share, stats).to_vec());
    }
    if let Some(avg) = average_stats(rows) {
        table.push(report_cells("Average", &avg).to_vec());
    }
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}
