//! Long-only, all-in trading simulator driven by predicted labels, and the
//! buy-and-hold baseline.
//!
//! Signal rules:
//! - a non-Hold label only fires when it differs from the previous non-Hold
//!   label, so repeated Buy (or Sell) predictions act once;
//! - a fired Buy while flat invests all cash, net of one commission, at the
//!   bar's close; a fired Sell while long liquidates at the close;
//! - while long, a close at or below `entry * (1 - stop_loss_fraction)`
//!   forces an exit at that close, checked before the bar's signal;
//! - a position still open on the last bar is closed at the last close.
//!
//! Because firing depends only on the label sequence, re-entry after a
//! stop-loss waits for the next fired Buy.

use std::fmt::Write as _;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("{prices} prices but {labels} labels")]
    LengthMismatch { prices: usize, labels: usize },
    #[error("non-positive price at bar {0}")]
    NonPositivePrice(usize),
    #[error("need at least {needed} price points, got {len}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("invalid trading config: {0}")]
    InvalidConfig(String),
    #[error("trade log: {0}")]
    TradeLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradingConfig {
    pub starting_capital: f64,
    pub commission_per_side: f64,
    pub stop_loss_fraction: f64,
}

impl Default for TradingConfig {
    fn default() -> Self {
        Self {
            starting_capital: 10_000.0,
            commission_per_side: 1.0,
            stop_loss_fraction: 0.05,
        }
    }
}

impl TradingConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if !(self.starting_capital > 0.0 && self.starting_capital.is_finite()) {
            return Err(BacktestError::InvalidConfig(
                "starting_capital must be positive".into(),
            ));
        }
        if !(self.commission_per_side >= 0.0 && self.commission_per_side.is_finite()) {
            return Err(BacktestError::InvalidConfig(
                "commission_per_side must be >= 0".into(),
            ));
        }
        if !(self.stop_loss_fraction > 0.0 && self.stop_loss_fraction < 1.0) {
            return Err(BacktestError::InvalidConfig(
                "stop_loss_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExitReason {
    Signal,
    StopLoss,
    EndOfData,
}

impl ExitReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitReason::Signal => "Signal",
            ExitReason::StopLoss => "StopLoss",
            ExitReason::EndOfData => "EndOfData",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Signal" => Some(ExitReason::Signal),
            "StopLoss" => Some(ExitReason::StopLoss),
            "EndOfData" => Some(ExitReason::EndOfData),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub date: NaiveDate,
    pub close: f64,
}

/// One round trip. `profit` is net of both commissions; `profit_pct` is
/// relative to the capital held just before entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub entry_index: usize,
    pub exit_index: usize,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
    pub entry_price: f64,
    pub exit_price: f64,
    pub shares: f64,
    pub profit: f64,
    pub profit_pct: f64,
    pub exit_reason: ExitReason,
    pub capital_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub date: NaiveDate,
    pub value: f64,
}

/// Trades plus the marked-to-market equity after every bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub starting_capital: f64,
    pub trades: Vec<Trade>,
    pub equity: Vec<EquityPoint>,
    pub final_capital: f64,
}

impl Ledger {
    /// Equity path with the starting capital prepended, dated at the first
    /// bar.
    pub fn equity_path(&self) -> Vec<(NaiveDate, f64)> {
        let mut path = Vec::with_capacity(self.equity.len() + 1);
        if let Some(first) = self.equity.first() {
            path.push((first.date, self.starting_capital));
        }
        path.extend(self.equity.iter().map(|p| (p.date, p.value)));
        path
    }

    /// Rebuilds the ledger from its trades and the price series. Equity is
    /// cash between trades and `shares * close` while a trade is open.
    pub fn from_trades(
        prices: &[PricePoint],
        trades: Vec<Trade>,
        starting_capital: f64,
    ) -> Result<Ledger, BacktestError> {
        let mut equity = Vec::with_capacity(prices.len());
        let mut cash = starting_capital;
        let mut next = trades.iter().peekable();
        let mut open: Option<&Trade> = None;
        for (t, p) in prices.iter().enumerate() {
            if open.is_none() {
                if let Some(tr) = next.peek() {
                    if tr.entry_index == t {
                        open = next.next();
                    }
                }
            }
            let value = match open {
                Some(tr) if t == tr.exit_index => {
                    cash = tr.capital_after;
                    open = None;
                    cash
                }
                Some(tr) => tr.shares * p.close,
                None => cash,
            };
            equity.push(EquityPoint {
                date: p.date,
                value,
            });
        }
        if open.is_some() || next.peek().is_some() {
            return Err(BacktestError::TradeLog(
                "trades do not fit the price series".into(),
            ));
        }
        Ok(Ledger {
            starting_capital,
            trades,
            final_capital: cash,
            equity,
        })
    }
}

fn validate_prices(prices: &[PricePoint]) -> Result<(), BacktestError> {
    match prices
        .iter()
        .position(|p| !(p.close > 0.0 && p.close.is_finite()))
    {
        Some(i) => Err(BacktestError::NonPositivePrice(i)),
        None => Ok(()),
    }
}

struct OpenPosition {
    entry_index: usize,
    entry_price: f64,
    shares: f64,
    capital_before: f64,
}

fn close_position(
    pos: OpenPosition,
    t: usize,
    prices: &[PricePoint],
    commission: f64,
    reason: ExitReason,
) -> Trade {
    let exit_price = prices[t].close;
    // A commission larger than the proceeds cannot push cash below zero.
    let cash = (pos.shares * exit_price - commission).max(0.0);
    let profit = cash - pos.capital_before;
    Trade {
        entry_index: pos.entry_index,
        exit_index: t,
        entry_date: prices[pos.entry_index].date,
        exit_date: prices[t].date,
        entry_price: pos.entry_price,
        exit_price,
        shares: pos.shares,
        profit,
        profit_pct: profit / pos.capital_before,
        exit_reason: reason,
        capital_after: cash,
    }
}

/// Marks which bars carry a fired signal: a non-Hold label that differs
/// from the previous non-Hold label.
pub fn fired_signals(labels: &[Label]) -> Vec<Option<Label>> {
    let mut last = None;
    labels
        .iter()
        .map(|&l| {
            if l == Label::Hold || Some(l) == last {
                None
            } else {
                last = Some(l);
                Some(l)
            }
        })
        .collect()
}

pub fn simulate(
    prices: &[PricePoint],
    labels: &[Label],
    cfg: &TradingConfig,
) -> Result<Ledger, BacktestError> {
    cfg.validate()?;
    if prices.len() != labels.len() {
        return Err(BacktestError::LengthMismatch {
            prices: prices.len(),
            labels: labels.len(),
        });
    }
    validate_prices(prices)?;

    let commission = cfg.commission_per_side;
    let signals = fired_signals(labels);
    let last_bar = prices.len().saturating_sub(1);

    let mut cash = cfg.starting_capital;
    let mut position: Option<OpenPosition> = None;
    let mut trades = Vec::new();
    let mut equity = Vec::with_capacity(prices.len());

    for (t, p) in prices.iter().enumerate() {
        if let Some(pos) = position.take() {
            let stop = pos.entry_price * (1.0 - cfg.stop_loss_fraction);
            let reason = if p.close <= stop {
                Some(ExitReason::StopLoss)
            } else if signals[t] == Some(Label::Sell) {
                Some(ExitReason::Signal)
            } else if t == last_bar {
                Some(ExitReason::EndOfData)
            } else {
                None
            };
            match reason {
                Some(reason) => {
                    let trade = close_position(pos, t, prices, commission, reason);
                    cash = trade.capital_after;
                    trades.push(trade);
                }
                None => position = Some(pos),
            }
        } else if signals[t] == Some(Label::Buy) && t < last_bar && cash > commission {
            position = Some(OpenPosition {
                entry_index: t,
                entry_price: p.close,
                shares: (cash - commission) / p.close,
                capital_before: cash,
            });
            cash = 0.0;
        }

        let value = match &position {
            Some(pos) => pos.shares * p.close,
            None => cash,
        };
        equity.push(EquityPoint {
            date: p.date,
            value,
        });
    }

    Ok(Ledger {
        starting_capital: cfg.starting_capital,
        trades,
        equity,
        final_capital: cash,
    })
}

/// Buys with all capital at the first close and sells at the last.
pub fn buy_and_hold(prices: &[PricePoint], cfg: &TradingConfig) -> Result<Ledger, BacktestError> {
    cfg.validate()?;
    if prices.len() < 2 {
        return Err(BacktestError::SeriesTooShort {
            len: prices.len(),
            needed: 2,
        });
    }
    validate_prices(prices)?;
    let capital = cfg.starting_capital;
    let commission = cfg.commission_per_side;
    let pos = OpenPosition {
        entry_index: 0,
        entry_price: prices[0].close,
        shares: ((capital - commission) / prices[0].close).max(0.0),
        capital_before: capital,
    };
    let shares = pos.shares;
    let last = prices.len() - 1;
    let trade = close_position(pos, last, prices, commission, ExitReason::EndOfData);
    let mut equity: Vec<EquityPoint> = prices
        .iter()
        .map(|p| EquityPoint {
            date: p.date,
            value: shares * p.close,
        })
        .collect();
    equity[last].value = trade.capital_after;
    Ok(Ledger {
        starting_capital: capital,
        final_capital: trade.capital_after,
        trades: vec![trade],
        equity,
    })
}

/// Human-readable trade log, one line per trade:
/// `N.(entry-exit) => profit Capital: $X`.
pub fn format_trade_log(ledger: &Ledger) -> String {
    let mut s = String::from("Transaction Number, Interval, Gain, Instant Capital\n");
    for (n, t) in ledger.trades.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}.({}-{}) => {:.2} Capital: ${:.2}",
            n + 1,
            t.entry_index,
            t.exit_index,
            t.profit,
            t.capital_after
        );
    }
    s
}

const TRADE_HEADER: [&str; 10] = [
    "trade_no",
    "entry_date",
    "exit_date",
    "entry_price",
    "exit_price",
    "shares",
    "profit",
    "profit_pct",
    "exit_reason",
    "capital_after",
];

pub fn write_trades_csv<W: Write>(trades: &[Trade], writer: W) -> Result<(), BacktestError> {
    let err = |e: csv::Error| BacktestError::TradeLog(e.to_string());
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(TRADE_HEADER).map_err(err)?;
    for (n, t) in trades.iter().enumerate() {
        wtr.write_record([
            (n + 1).to_string(),
            t.entry_date.to_string(),
            t.exit_date.to_string(),
            t.entry_price.to_string(),
            t.exit_price.to_string(),
            t.shares.to_string(),
            t.profit.to_string(),
            t.profit_pct.to_string(),
            t.exit_reason.as_str().to_string(),
            t.capital_after.to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush()
        .map_err(|e| BacktestError::TradeLog(e.to_string()))
}

/// Reads a trade CSV back, resolving dates to bar indices in `prices`.
pub fn read_trades_csv<R: Read>(
    reader: R,
    prices: &[PricePoint],
) -> Result<Vec<Trade>, BacktestError> {
    let index_of = |d: NaiveDate| {
        prices
            .binary_search_by_key(&d, |p| p.date)
            .map_err(|_| BacktestError::TradeLog(format!("date {d} not in price series")))
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let r = record.map_err(|e| BacktestError::TradeLog(e.to_string()))?;
        if r.len() != TRADE_HEADER.len() {
            return Err(BacktestError::TradeLog("wrong field count".into()));
        }
        let bad = |what: &str| BacktestError::TradeLog(format!("bad {what} `{}`", r.as_slice()));
        let num = |i: usize| r[i].parse::<f64>().map_err(|_| bad(TRADE_HEADER[i]));
        let date = |i: usize| r[i].parse::<NaiveDate>().map_err(|_| bad(TRADE_HEADER[i]));
        let entry_date = date(1)?;
        let exit_date = date(2)?;
        out.push(Trade {
            entry_index: index_of(entry_date)?,
            exit_index: index_of(exit_date)?,
            entry_date,
            exit_date,
            entry_price: num(3)?,
            exit_price: num(4)?,
            shares: num(5)?,
            profit: num(6)?,
            profit_pct: num(7)?,
            exit_reason: ExitReason::parse(&r[8]).ok_or_else(|| bad("exit_reason"))?,
            capital_after: num(9)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Buy as B, Hold as H, Sell as S};

    fn prices(closes: &[f64]) -> Vec<PricePoint> {
        let start = NaiveDate::from_ymd_opt(2007, 1, 1).unwrap();
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| PricePoint {
                date: start + chrono::Duration::days(i as i64),
                close: c,
            })
            .collect()
    }

    fn cfg() -> TradingConfig {
        TradingConfig::default()
    }

    #[test]
    fn buy_then_sell() {
        let l = simulate(&prices(&[100.0, 110.0]), &[B, S], &cfg()).unwrap();
        assert_eq!(l.trades.len(), 1);
        let t = l.trades[0];
        assert!((t.shares - 99.99).abs() < 1e-12);
        assert!((l.final_capital - 10997.90).abs() < 1e-6);
        assert!((t.profit - 997.90).abs() < 1e-6);
        assert_eq!(t.exit_reason, ExitReason::Signal);
        assert_eq!((t.entry_index, t.exit_index), (0, 1));
    }

    #[test]
    fn all_hold() {
        let l = simulate(&prices(&[100.0, 90.0, 120.0]), &[H, H, H], &cfg()).unwrap();
        assert!(l.trades.is_empty());
        assert_eq!(l.final_capital, 10_000.0);
        assert!(l.equity.iter().all(|e| e.value == 10_000.0));
    }

    #[test]
    fn stop_loss_then_sell_ignored() {
        let l = simulate(&prices(&[100.0, 94.0, 120.0]), &[B, H, S], &cfg()).unwrap();
        assert_eq!(l.trades.len(), 1);
        let t = l.trades[0];
        assert_eq!(t.exit_reason, ExitReason::StopLoss);
        assert_eq!(t.exit_index, 1);
        assert!((l.final_capital - 9398.06).abs() < 1e-6);
        assert_eq!(l.equity[2].value, l.final_capital);
    }

    #[test]
    fn stop_loss_boundary_is_inclusive() {
        let l = simulate(&prices(&[100.0, 95.0, 96.0]), &[B, H, H], &cfg()).unwrap();
        assert_eq!(l.trades[0].exit_reason, ExitReason::StopLoss);
    }

    #[test]
    fn end_of_data_exit() {
        let l = simulate(&prices(&[100.0, 101.0, 102.0]), &[B, B, H], &cfg()).unwrap();
        assert_eq!(l.trades.len(), 1);
        assert_eq!(l.trades[0].exit_reason, ExitReason::EndOfData);
        assert_eq!(l.trades[0].exit_index, 2);
        assert_eq!(l.final_capital, l.equity[2].value);
    }

    #[test]
    fn no_entry_on_last_bar() {
        let l = simulate(&prices(&[100.0, 101.0]), &[H, B], &cfg()).unwrap();
        assert!(l.trades.is_empty());
    }

    #[test]
    fn repeated_buy_after_stop_needs_fresh_signal() {
        let l = simulate(
            &prices(&[100.0, 90.0, 91.0, 92.0, 93.0, 94.0]),
            &[B, B, B, S, B, H],
            &cfg(),
        )
        .unwrap();
        // stopped at bar 1; bars 2 repeat Buy; Sell at 3 fires while flat;
        // fresh Buy at 4 re-enters and is closed at the end.
        assert_eq!(l.trades.len(), 2);
        assert_eq!(l.trades[1].entry_index, 4);
        assert_eq!(l.trades[1].exit_reason, ExitReason::EndOfData);
    }

    #[test]
    fn guards() {
        assert_eq!(
            simulate(&prices(&[1.0, 2.0]), &[B], &cfg()),
            Err(BacktestError::LengthMismatch {
                prices: 2,
                labels: 1
            })
        );
        assert_eq!(
            simulate(&prices(&[1.0, -2.0]), &[B, S], &cfg()),
            Err(BacktestError::NonPositivePrice(1))
        );
        assert!(buy_and_hold(&prices(&[1.0]), &cfg()).is_err());
    }

    #[test]
    fn buy_and_hold_examples() {
        let l = buy_and_hold(&prices(&[100.0, 200.0]), &cfg()).unwrap();
        assert!((l.final_capital - 19997.0).abs() < 1e-9);
        let l = buy_and_hold(&prices(&[100.0, 100.0]), &cfg()).unwrap();
        assert!((l.final_capital - 9998.0).abs() < 1e-9);
        assert_eq!(l.trades.len(), 1);
        assert_eq!(l.equity.last().unwrap().value, l.final_capital);
    }

    #[test]
    fn trade_log_format() {
        let l = simulate(&prices(&[100.0, 110.0]), &[B, S], &cfg()).unwrap();
        assert_eq!(
            format_trade_log(&l),
            "Transaction Number, Interval, Gain, Instant Capital\n1.(0-1) => 997.90 Capital: $10997.90\n"
        );
    }

    #[test]
    fn trade_csv_round_trip_rebuilds_ledger() {
        let p = prices(&[100.0, 104.0, 99.0, 108.0, 102.0, 97.0, 103.0, 111.0]);
        let labels = [B, H, S, B, H, H, S, H];
        let l = simulate(&p, &labels, &cfg()).unwrap();
        let mut buf = Vec::new();
        write_trades_csv(&l.trades, &mut buf).unwrap();
        let trades = read_trades_csv(buf.as_slice(), &p).unwrap();
        assert_eq!(trades, l.trades);
        let rebuilt = Ledger::from_trades(&p, trades, 10_000.0).unwrap();
        assert_eq!(rebuilt, l);
    }
}
