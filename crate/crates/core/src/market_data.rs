//! Daily OHLCV ingestion in the Yahoo Finance CSV layout and the
//! adjusted-close price correction.
//!
//! Each bar is rescaled by `ratio = close / adjusted_close`, so every price
//! of the output series lives on the adjusted scale and the adjusted close
//! is carried through exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Expected header of every input file.
pub const CSV_HEADER: [&str; 7] = [
    "Date",
    "Open",
    "High",
    "Low",
    "Close",
    "Adj Close",
    "Volume",
];

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketDataError {
    #[error("missing or malformed header, expected `{}`", CSV_HEADER.join(","))]
    MalformedHeader,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-positive price at line {line}")]
    NonPositivePrice { line: u64 },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("adjusted close is not positive on {0}")]
    ZeroAdjustedClose(NaiveDate),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Error raised while loading a ticker file, tagged with the ticker symbol.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{symbol}: {source}")]
pub struct TickerError {
    pub symbol: String,
    #[source]
    pub source: MarketDataError,
}

/// One trading day as exported by the data vendor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adjusted_close: f64,
    pub volume: u64,
}

/// A bar after the adjusted-close correction. `close` is the source
/// adjusted close; volume is passed through unmodified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

/// Row count and date range of a loaded ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub symbol: String,
    pub rows: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickerSeries {
    pub bars: Vec<AdjustedBar>,
    pub provenance: Provenance,
}

fn malformed(line: u64, reason: impl Into<String>) -> MarketDataError {
    MarketDataError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn parse_price(field: &str, line: u64, name: &str) -> Result<f64, MarketDataError> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| malformed(line, format!("{name} `{field}` is not a number")))?;
    if !value.is_finite() {
        return Err(malformed(line, format!("{name} is not finite")));
    }
    if value <= 0.0 {
        return Err(MarketDataError::NonPositivePrice { line });
    }
    Ok(value)
}

/// Parses a daily CSV export. Bars come back sorted by ascending date
/// regardless of file order.
pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<OhlcvBar>, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(_)) | None => return Err(MarketDataError::MalformedHeader),
    };
    if header.len() != CSV_HEADER.len()
        || header
            .iter()
            .zip(CSV_HEADER)
            .any(|(got, want)| got.trim() != want)
    {
        return Err(MarketDataError::MalformedHeader);
    }

    let mut bars = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != CSV_HEADER.len() {
            return Err(malformed(
                line,
                format!(
                    "expected {} fields, found {}",
                    CSV_HEADER.len(),
                    record.len()
                ),
            ));
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), DATE_FORMAT)
            .map_err(|_| malformed(line, format!("bad date `{}`", &record[0])))?;
        let open = parse_price(&record[1], line, "open")?;
        let high = parse_price(&record[2], line, "high")?;
        let low = parse_price(&record[3], line, "low")?;
        let close = parse_price(&record[4], line, "close")?;
        let adjusted_close = parse_price(&record[5], line, "adj close")?;
        let volume: u64 = record[6]
            .trim()
            .parse()
            .map_err(|_| malformed(line, format!("volume `{}` is not a count", &record[6])))?;

        if low > open.min(close) || high < open.max(close) || low > high {
            return Err(malformed(line, "high/low do not bracket open and close"));
        }

        bars.push(OhlcvBar {
            date,
            open,
            high,
            low,
            close,
            adjusted_close,
            volume,
        });
    }

    bars.sort_by_key(|b| b.date);
    if let Some(dup) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(MarketDataError::DuplicateDate(dup[0].date));
    }
    Ok(bars)
}

/// Rescales open/high/low/close by `close / adjusted_close`.
pub fn adjust_bars(bars: &[OhlcvBar]) -> Result<Vec<AdjustedBar>, MarketDataError> {
    bars.iter()
        .map(|b| {
            if b.adjusted_close.is_nan() || b.adjusted_close <= 0.0 {
                return Err(MarketDataError::ZeroAdjustedClose(b.date));
            }
            let ratio = b.close / b.adjusted_close;
            let open = b.open / ratio;
            let close = b.adjusted_close;
            // close is taken verbatim rather than divided, so the range can
            // miss it by an ulp; widen to keep low <= open,close <= high.
            Ok(AdjustedBar {
                date: b.date,
                open,
                high: (b.high / ratio).max(open).max(close),
                low: (b.low / ratio).min(open).min(close),
                close,
                volume: b.volume,
            })
        })
        .collect()
}

impl AdjustedBar {
    /// View as a vendor bar whose adjusted close equals its close.
    pub fn as_ohlcv(&self) -> OhlcvBar {
        OhlcvBar {
            date: self.date,
            open: self.open,
            high: self.high,
            low: self.low,
            close: self.close,
            adjusted_close: self.close,
            volume: self.volume,
        }
    }
}

/// Writes bars in the input CSV schema. Floats use shortest round-trip
/// formatting so `parse_csv` recovers them exactly.
pub fn write_csv<W: Write>(bars: &[OhlcvBar], writer: W) -> Result<(), MarketDataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| MarketDataError::Io(e.to_string());
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for b in bars {
        wtr.write_record([
            b.date.format(DATE_FORMAT).to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.adjusted_close.to_string(),
            b.volume.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| MarketDataError::Io(e.to_string()))
}

/// Re-exports an adjusted series in the input schema (`Adj Close == Close`).
pub fn write_adjusted_csv<W: Write>(
    bars: &[AdjustedBar],
    writer: W,
) -> Result<(), MarketDataError> {
    let as_raw: Vec<OhlcvBar> = bars.iter().map(AdjustedBar::as_ohlcv).collect();
    write_csv(&as_raw, writer)
}

/// Ticker symbol derived from a file stem, e.g. `data/WMT.csv` -> `WMT`.
pub fn symbol_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses and adjusts one ticker file.
pub fn load_ticker(path: &Path) -> Result<TickerSeries, TickerError> {
    let symbol = symbol_from_path(path);
    let tag = |source| TickerError {
        symbol: symbol.clone(),
        source,
    };
    let file = fs::File::open(path).map_err(|e| tag(MarketDataError::Io(e.to_string())))?;
    let raw = parse_csv(std::io::BufReader::new(file)).map_err(tag)?;
    let bars = adjust_bars(&raw).map_err(tag)?;
    let provenance = Provenance {
        symbol: symbol.clone(),
        rows: bars.len(),
        first_date: bars.first().map(|b| b.date),
        last_date: bars.last().map(|b| b.date),
    };
    Ok(TickerSeries { bars, provenance })
}

/// Checks that dates strictly increase, which every downstream windowed
/// computation assumes.
pub fn is_strictly_increasing(bars: &[AdjustedBar]) -> bool {
    bars.windows(2).all(|w| w[0].date < w[1].date)
}
