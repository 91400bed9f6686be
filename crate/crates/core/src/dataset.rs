//! Training-set preparation: extrema labeling, date split, min-max
//! normalization fitted on the training period, and minority-class
//! duplication.

use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::FeatureRow;

pub const FEATURE_NAMES: [&str; 4] = ["close", "rsi", "williams_r", "macd"];
pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("series of {len} rows is shorter than the labeling window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("labeling window must be odd and >= 3, got {0}")]
    InvalidWindow(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("{0} split is empty")]
    EmptySplit(SplitSide),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("feature `{0}` is constant over the training set")]
    ConstantFeature(&'static str),
    #[error("training set has no {0} samples")]
    MissingClass(Label),
    #[error("malformed dataset row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    Train,
    Test,
}

impl fmt::Display for SplitSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitSide::Train => "train",
            SplitSide::Test => "test",
        })
    }
}

/// Trading signal class. Integer codes are part of every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Hold = 0,
    Buy = 1,
    Sell = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Hold, Label::Buy, Label::Sell];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.code()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Label::from_code(code).ok_or_else(|| format!("invalid label code {code}"))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hold => "Hold",
            Label::Buy => "Buy",
            Label::Sell => "Sell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerConfig {
    pub window: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self { window: 15 }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(DatasetError::InvalidWindow(self.window));
        }
        Ok(())
    }
}

/// Labels a close series: a bar is Sell when it is the strict unique
/// maximum of the centered window around it, Buy when it is the strict
/// unique minimum. Everything else, including the first and last
/// `window / 2` bars, is Hold.
pub fn label_closes(closes: &[f64], cfg: &LabelerConfig) -> Result<Vec<Label>, DatasetError> {
    cfg.validate()?;
    if closes.len() < cfg.window {
        return Err(DatasetError::SeriesTooShort {
            len: closes.len(),
            window: cfg.window,
        });
    }
    let half = cfg.window / 2;
    let mut labels = vec![Label::Hold; closes.len()];
    for t in half..closes.len() - half {
        let center = closes[t];
        let neighbors = closes[t - half..=t + half]
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != half)
            .map(|(_, &c)| c);
        let (mut above, mut below) = (true, true);
        for c in neighbors {
            above &= center > c;
            below &= center < c;
        }
        if above {
            labels[t] = Label::Sell;
        } else if below {
            labels[t] = Label::Buy;
        }
    }
    Ok(labels)
}

pub fn label_extrema(
    rows: &[FeatureRow],
    cfg: &LabelerConfig,
) -> Result<Vec<(NaiveDate, Label)>, DatasetError> {
    let closes: Vec<f64> = rows.iter().map(|r| r.close).collect();
    let labels = label_closes(&closes, cfg)?;
    Ok(rows.iter().map(|r| r.date).zip(labels).collect())
}

/// A feature row with its target class, before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledRow {
    pub row: FeatureRow,
    pub label: Label,
}

/// Joins rows with their labels. Lengths must match.
pub fn attach_labels(rows: &[FeatureRow], labels: &[(NaiveDate, Label)]) -> Vec<LabeledRow> {
    debug_assert_eq!(rows.len(), labels.len());
    rows.iter()
        .zip(labels)
        .map(|(&row, &(date, label))| {
            debug_assert_eq!(row.date, date);
            LabeledRow { row, label }
        })
        .collect()
}

/// Normalized classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub date: NaiveDate,
    pub features: [f64; FEATURE_COUNT],
    pub label: Label,
    pub raw_close: f64,
}

pub trait Dated {
    fn date(&self) -> NaiveDate;
}

impl Dated for FeatureRow {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

impl Dated for LabeledRow {
    fn date(&self) -> NaiveDate {
        self.row.date
    }
}

impl Dated for LabeledSample {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

/// Inclusive training and test date ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl Default for SplitSpec {
    fn default() -> Self {
        let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        Self {
            train_start: ymd(1997, 1, 1),
            train_end: ymd(2006, 12, 31),
            test_start: ymd(2007, 1, 1),
            test_end: ymd(2017, 1, 1),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.train_start > self.train_end || self.test_start > self.test_end {
            return Err(DatasetError::InvalidSplit(
                "a range ends before it starts".into(),
            ));
        }
        if self.train_end >= self.test_start {
            return Err(DatasetError::InvalidSplit(format!(
                "train_end {} must precede test_start {}",
                self.train_end, self.test_start
            )));
        }
        Ok(())
    }

    fn in_train(&self, d: NaiveDate) -> bool {
        self.train_start <= d && d <= self.train_end
    }

    fn in_test(&self, d: NaiveDate) -> bool {
        self.test_start <= d && d <= self.test_end
    }
}

/// Splits date-sorted items into inclusive train and test ranges.
/// Items outside both ranges are dropped.
pub fn split_by_date<T: Dated + Clone>(
    samples: &[T],
    spec: &SplitSpec,
) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    spec.validate()?;
    let train: Vec<T> = samples
        .iter()
        .filter(|s| spec.in_train(s.date()))
        .cloned()
        .collect();
    let test: Vec<T> = samples
        .iter()
        .filter(|s| spec.in_test(s.date()))
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(DatasetError::EmptySplit(SplitSide::Train));
    }
    if test.is_empty() {
        return Err(DatasetError::EmptySplit(SplitSide::Test));
    }
    Ok((train, test))
}

fn feature_vector(r: &FeatureRow) -> [f64; FEATURE_COUNT] {
    [r.close, r.rsi, r.williams_r, r.macd]
}

/// Per-feature min-max scaling fitted on the training period. A value
/// only exists once fitted, so it cannot be applied unfitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: [f64; FEATURE_COUNT],
    pub max: [f64; FEATURE_COUNT],
}

impl Normalizer {
    pub fn fit<'a, I>(rows: I) -> Result<Normalizer, DatasetError>
    where
        I: IntoIterator<Item = &'a FeatureRow>,
    {
        let mut min = [f64::INFINITY; FEATURE_COUNT];
        let mut max = [f64::NEG_INFINITY; FEATURE_COUNT];
        let mut any = false;
        for r in rows {
            any = true;
            for (k, v) in feature_vector(r).into_iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        if !any {
            return Err(DatasetError::EmptyTraining);
        }
        if let Some(k) = (0..FEATURE_COUNT).find(|&k| max[k] <= min[k]) {
            return Err(DatasetError::ConstantFeature(FEATURE_NAMES[k]));
        }
        Ok(Normalizer { min, max })
    }

    /// Maps each feature through `(x - min) / (max - min)`. Values outside
    /// the training range are not clamped.
    pub fn transform(&self, r: &FeatureRow) -> [f64; FEATURE_COUNT] {
        let mut out = feature_vector(r);
        for (k, v) in out.iter_mut().enumerate() {
            *v = (*v - self.min[k]) / (self.max[k] - self.min[k]);
        }
        out
    }

    pub fn inverse(&self, x: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        let mut out = *x;
        for (k, v) in out.iter_mut().enumerate() {
            *v = *v * (self.max[k] - self.min[k]) + self.min[k];
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("normalizer serializes")
    }

    pub fn from_toml(text: &str) -> Result<Normalizer, DatasetError> {
        toml::from_str(text).map_err(|e| DatasetError::Io(e.to_string()))
    }
}

pub fn fit_normalizer(train: &[LabeledRow]) -> Result<Normalizer, DatasetError> {
    Normalizer::fit(train.iter().map(|r| &r.row))
}

pub fn apply_normalizer(n: &Normalizer, rows: &[LabeledRow]) -> Vec<LabeledSample> {
    rows.iter()
        .map(|r| LabeledSample {
            date: r.row.date,
            features: n.transform(&r.row),
            label: r.label,
            raw_close: r.row.close,
        })
        .collect()
}

pub fn class_counts<'a, I>(labels: I) -> [usize; 3]
where
    I: IntoIterator<Item = &'a Label>,
{
    let mut counts = [0; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Duplicates every sample of each non-majority class `floor(majority /
/// count)` times, then shuffles deterministically with `seed`.
pub fn resample_minority(
    train: &[LabeledSample],
    seed: u64,
) -> Result<Vec<LabeledSample>, DatasetError> {
    let counts = class_counts(train.iter().map(|s| &s.label));
    if let Some(missing) = Label::ALL.into_iter().find(|l| counts[l.index()] == 0) {
        return Err(DatasetError::MissingClass(missing));
    }
    let majority = *counts.iter().max().expect("three classes");
    let factor = counts.map(|n| majority / n);

    let mut out = Vec::with_capacity(factor.iter().zip(&counts).map(|(f, n)| f * n).sum());
    for s in train {
        for _ in 0..factor[s.label.index()] {
            out.push(*s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    Ok(out)
}

const DATASET_HEADER: [&str; 7] = ["Date", "f1", "f2", "f3", "f4", "Label", "RawClose"];

/// Writes `Date,f1,f2,f3,f4,Label,RawClose`.
pub fn write_samples_csv<W: Write>(
    samples: &[LabeledSample],
    writer: W,
) -> Result<(), DatasetError> {
    let io = |e: csv::Error| DatasetError::Io(e.to_string());
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(DATASET_HEADER).map_err(io)?;
    for s in samples {
        let [f1, f2, f3, f4] = s.features;
        wtr.write_record([
            s.date.to_string(),
            f1.to_string(),
            f2.to_string(),
            f3.to_string(),
            f4.to_string(),
            s.label.code().to_string(),
            s.raw_close.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| DatasetError::Io(e.to_string()))
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<LabeledSample>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| DatasetError::Io(e.to_string()))?;
    if header.iter().ne(DATASET_HEADER) {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DatasetError::Io(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: &str| DatasetError::MalformedRow {
            line,
            reason: reason.to_string(),
        };
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| bad("bad number"));
        let date = record[0]
            .parse::<NaiveDate>()
            .map_err(|_| bad("bad date"))?;
        let label = record[5]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_code)
            .ok_or_else(|| bad("bad label"))?;
        out.push(LabeledSample {
            date,
            features: [num(1)?, num(2)?, num(3)?, num(4)?],
            label,
            raw_close: num(6)?,
        });
    }
    Ok(out)
}
