//! Fixtures shared by the benchmarks.

use neurotrade::backtest::PricePoint;
use neurotrade::dataset::{self, Label, LabeledSample, LabelerConfig};
use neurotrade::indicators::{self, IndicatorConfig};
use neurotrade::market_data::{self, AdjustedBar};
use neurotrade::{synthetic, NaiveDate};

/// About `years` of business-day bars from a seeded random walk.
pub fn bars(years: i32, seed: u64) -> Vec<AdjustedBar> {
    let first = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let last = NaiveDate::from_ymd_opt(2000 + years, 1, 3).expect("valid date");
    let dates = synthetic::business_days(first, last);
    market_data::adjust_bars(&synthetic::random_walk_bars(seed, &dates, 50.0, 0.015))
        .expect("valid bars")
}

/// Labeled, min-max normalized samples for the given bars.
pub fn samples(bars: &[AdjustedBar]) -> Vec<LabeledSample> {
    let rows =
        indicators::compute_feature_rows(bars, &IndicatorConfig::default()).expect("long enough");
    let labels = dataset::label_extrema(&rows, &LabelerConfig::default()).expect("long enough");
    let labeled = dataset::attach_labels(&rows, &labels);
    let norm = dataset::fit_normalizer(&labeled).expect("non-constant");
    dataset::apply_normalizer(&norm, &labeled)
}

pub fn prices_and_labels(samples: &[LabeledSample]) -> (Vec<PricePoint>, Vec<Label>) {
    samples
        .iter()
        .map(|s| {
            (
                PricePoint {
                    date: s.date,
                    close: s.raw_close,
                },
                s.label,
            )
        })
        .unzip()
}
