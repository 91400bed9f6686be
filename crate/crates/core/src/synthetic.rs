//! Deterministic synthetic price series for demos, benchmarks and tests.

use std::f64::consts::TAU;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market_data::OhlcvBar;

/// Weekdays from `first` to `last` inclusive.
pub fn business_days(first: NaiveDate, last: NaiveDate) -> Vec<NaiveDate> {
    first
        .iter_days()
        .take_while(|d| *d <= last)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

/// Geometric random walk with small intraday ranges. The adjusted close
/// trails the close by a slowly accruing dividend factor so the adjustment
/// step has something to do.
pub fn random_walk_bars(
    seed: u64,
    dates: &[NaiveDate],
    start_price: f64,
    daily_vol: f64,
) -> Vec<OhlcvBar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dates.len();
    let mut close = start_price;
    dates
        .iter()
        .enumerate()
        .map(|(i, &date)| {
            let open = close;
            let shock: f64 = rng.gen_range(-1.0..1.0) * daily_vol * 3f64.sqrt();
            close = (open * (1.0 + shock)).max(0.01);
            let wick_up: f64 = rng.gen_range(0.0..daily_vol);
            let wick_down: f64 = rng.gen_range(0.0..daily_vol);
            let high = open.max(close) * (1.0 + wick_up);
            let low = open.min(close) * (1.0 - wick_down);
            // factor rises from 0.7 to 1.0 across the series
            let factor = 0.7 + 0.3 * (i as f64 + 1.0) / n as f64;
            OhlcvBar {
                date,
                open,
                high,
                low,
                close,
                adjusted_close: close * factor,
                volume: rng.gen_range(100_000..5_000_000),
            }
        })
        .collect()
}

/// Close price of the noiseless sine at bar `t`.
pub fn sine_close(t: f64, base: f64, amplitude: f64, period: f64, phase: f64) -> f64 {
    base + amplitude * (TAU * (t + phase) / period).sin()
}

/// Bars whose close follows a noiseless sine; open is the previous close
/// and the high/low bracket the two.
pub fn sine_bars(
    dates: &[NaiveDate],
    base: f64,
    amplitude: f64,
    period: f64,
    phase: f64,
) -> Vec<OhlcvBar> {
    let mut prev = sine_close(-1.0, base, amplitude, period, phase);
    dates
        .iter()
        .enumerate()
        .map(|(i, &date)| {
            let close = sine_close(i as f64, base, amplitude, period, phase);
            let open = prev;
            prev = close;
            OhlcvBar {
                date,
                open,
                high: open.max(close),
                low: open.min(close),
                close,
                adjusted_close: close,
                volume: 1_000_000,
            }
        })
        .collect()
}
