//! Daily OHLCV loading, calendar alignment, and train/valid/test views.
//!
//! Missing days are handled by intersecting calendars across the universe,
//! never by forward-filling: fabricated prices would leak into indicator
//! lookbacks. Futures are expected as continuous back-adjusted series in
//! the input files; roll mechanics are not simulated here.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed row {row}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: OHLC violation at row {row} ({date}): {message}")]
    OhlcViolation {
        path: String,
        row: usize,
        date: NaiveDate,
        message: String,
    },
    #[error("{path}: duplicate date {date}")]
    DuplicateDate { path: String, date: NaiveDate },
    #[error("calendar intersection across the universe is empty")]
    EmptyIntersection,
    #[error("no series supplied")]
    NoSeries,
    #[error("{split} range {start}..={end} contains no trading day")]
    EmptySplit {
        split: SplitLabel,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("split ranges must be disjoint and ordered train < valid < test")]
    BadSplitOrder,
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// One trading day of one asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl Bar {
    /// Enforces low <= min(open, close), high >= max(open, close), prices > 0.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.open > 0.0 && self.high > 0.0 && self.low > 0.0 && self.close > 0.0) {
            return Err("prices must be positive".into());
        }
        if !(self.open.is_finite()
            && self.high.is_finite()
            && self.low.is_finite()
            && self.close.is_finite())
        {
            return Err("prices must be finite".into());
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} above min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Equity,
    Futures,
}

/// Date-ordered bar history for one symbol.
///
/// `point_value` is the currency value of one price point (1.0 for
/// equities, the contract multiplier for futures).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceSeries {
    pub symbol: String,
    pub asset_class: AssetClass,
    pub point_value: f64,
    pub bars: Vec<Bar>,
}

impl PriceSeries {
    pub fn new(
        symbol: impl Into<String>,
        asset_class: AssetClass,
        point_value: f64,
        mut bars: Vec<Bar>,
    ) -> Result<Self, DataError> {
        let symbol = symbol.into();
        bars.sort_by_key(|b| b.date);
        for pair in bars.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(DataError::DuplicateDate {
                    path: symbol.clone(),
                    date: pair[0].date,
                });
            }
        }
        Ok(Self {
            symbol,
            asset_class,
            point_value,
            bars,
        })
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.bars.iter().map(|b| b.date)
    }

    /// Writes the series back out in the canonical CSV schema.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut out = String::from("date,open,high,low,close,volume\n");
        for b in &self.bars {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.date, b.open, b.high, b.low, b.close, b.volume
            ));
        }
        file.write_all(out.as_bytes()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Parse one CSV file of daily bars. Header must name
/// `date,open,high,low,close,volume` in any order.
pub fn load_ohlcv_csv(
    path: &Path,
    symbol: &str,
    asset_class: AssetClass,
    point_value: f64,
) -> Result<PriceSeries, DataError> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path_str.clone(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv {
                path: path_str.clone(),
                source: e,
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: path_str.clone(),
            source,
        })?
        .clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MalformedRow {
                path: path_str.clone(),
                row: 0,
                message: format!("missing column `{name}`"),
            })
    };
    let (c_date, c_open, c_high, c_low, c_close, c_vol) = (
        col("date")?,
        col("open")?,
        col("high")?,
        col("low")?,
        col("close")?,
        col("volume")?,
    );

    let mut bars = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1; // 1-based data row index
        let rec = rec.map_err(|source| DataError::Csv {
            path: path_str.clone(),
            source,
        })?;
        let field = |idx: usize| -> Result<&str, DataError> {
            rec.get(idx).ok_or_else(|| DataError::MalformedRow {
                path: path_str.clone(),
                row,
                message: "short row".into(),
            })
        };
        let date = NaiveDate::parse_from_str(field(c_date)?, "%Y-%m-%d").map_err(|e| {
            DataError::MalformedRow {
                path: path_str.clone(),
                row,
                message: format!("bad date: {e}"),
            }
        })?;
        let num = |idx: usize, name: &str| -> Result<f64, DataError> {
            field(idx)?.parse::<f64>().map_err(|e| DataError::MalformedRow {
                path: path_str.clone(),
                row,
                message: format!("bad {name}: {e}"),
            })
        };
        let volume = field(c_vol)?
            .parse::<u64>()
            .map_err(|e| DataError::MalformedRow {
                path: path_str.clone(),
                row,
                message: format!("bad volume: {e}"),
            })?;
        let bar = Bar {
            date,
            open: num(c_open, "open")?,
            high: num(c_high, "high")?,
            low: num(c_low, "low")?,
            close: num(c_close, "close")?,
            volume,
        };
        bar.validate().map_err(|message| DataError::OhlcViolation {
            path: path_str.clone(),
            row,
            date,
            message,
        })?;
        if !seen.insert(date) {
            return Err(DataError::DuplicateDate {
                path: path_str.clone(),
                date,
            });
        }
        bars.push(bar);
    }
    PriceSeries::new(symbol, asset_class, point_value, bars)
}

/// The aligned asset universe: every series covers the shared calendar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Universe {
    pub calendar: Vec<NaiveDate>,
    /// Sorted by symbol; each series has exactly one bar per calendar day.
    pub series: Vec<PriceSeries>,
    /// Bars dropped per symbol during alignment.
    pub dropped: Vec<(String, usize)>,
}

impl Universe {
    pub fn symbols(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.symbol.as_str()).collect()
    }

    pub fn series_for(&self, symbol: &str) -> Option<&PriceSeries> {
        self.series.iter().find(|s| s.symbol == symbol)
    }

    pub fn len(&self) -> usize {
        self.calendar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calendar.is_empty()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }
}

/// Intersect calendars and drop bars outside the shared dates.
pub fn align_calendar(series_set: Vec<PriceSeries>) -> Result<Universe, DataError> {
    if series_set.is_empty() {
        return Err(DataError::NoSeries);
    }
    let mut shared: BTreeSet<NaiveDate> = series_set[0].dates().collect();
    for s in &series_set[1..] {
        let dates: BTreeSet<NaiveDate> = s.dates().collect();
        shared = shared.intersection(&dates).copied().collect();
    }
    if shared.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    let mut series: Vec<PriceSeries> = Vec::with_capacity(series_set.len());
    let mut dropped = Vec::new();
    for s in series_set {
        let before = s.bars.len();
        let bars: Vec<Bar> = s.bars.into_iter().filter(|b| shared.contains(&b.date)).collect();
        dropped.push((s.symbol.clone(), before - bars.len()));
        series.push(PriceSeries {
            symbol: s.symbol,
            asset_class: s.asset_class,
            point_value: s.point_value,
            bars,
        });
    }
    series.sort_by(|a, b| a.symbol.cmp(&b.symbol));
    Ok(Universe {
        calendar: shared.into_iter().collect(),
        series,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitLabel::Train => write!(f, "train"),
            SplitLabel::Valid => write!(f, "valid"),
            SplitLabel::Test => write!(f, "test"),
        }
    }
}

/// Inclusive train/valid/test date ranges, disjoint and ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: (NaiveDate, NaiveDate),
    pub valid: (NaiveDate, NaiveDate),
    pub test: (NaiveDate, NaiveDate),
}

impl SplitSpec {
    pub fn new(
        train: (NaiveDate, NaiveDate),
        valid: (NaiveDate, NaiveDate),
        test: (NaiveDate, NaiveDate),
    ) -> Result<Self, DataError> {
        let ordered = train.0 <= train.1
            && valid.0 <= valid.1
            && test.0 <= test.1
            && train.1 < valid.0
            && valid.1 < test.0;
        if !ordered {
            return Err(DataError::BadSplitOrder);
        }
        Ok(Self { train, valid, test })
    }
}

/// A contiguous date slice of a universe.
///
/// The slice bounds the *evaluation window*; indicator lookbacks may still
/// reach bars of the underlying universe that precede the window, exactly
/// like a live strategy warm-started on prior history. Bars after the
/// window are never read by any evaluation at or inside it.
#[derive(Debug, Clone)]
pub struct DatasetView {
    universe: Arc<Universe>,
    start: usize,
    end: usize, // inclusive
    pub label: SplitLabel,
}

impl DatasetView {
    pub fn new(universe: Arc<Universe>, label: SplitLabel, start: usize, end: usize) -> Self {
        assert!(start <= end && end < universe.len());
        Self {
            universe,
            start,
            end,
            label,
        }
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn universe_arc(&self) -> Arc<Universe> {
        Arc::clone(&self.universe)
    }

    /// Number of trading days in the window.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires start <= end
    }

    /// Map a view-relative day offset to the universe calendar index.
    pub fn global_index(&self, t: usize) -> usize {
        debug_assert!(t < self.len());
        self.start + t
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.universe.calendar[self.global_index(t)]
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.universe.calendar[self.start..=self.end]
    }
}

/// Slice a universe into train/valid/test views.
pub fn split_periods(
    universe: Arc<Universe>,
    spec: &SplitSpec,
) -> Result<(DatasetView, DatasetView, DatasetView), DataError> {
    let slice = |label: SplitLabel, (lo, hi): (NaiveDate, NaiveDate)| {
        let start = universe.calendar.partition_point(|d| *d < lo);
        let end = universe.calendar.partition_point(|d| *d <= hi);
        if start >= end {
            return Err(DataError::EmptySplit {
                split: label,
                start: lo,
                end: hi,
            });
        }
        Ok(DatasetView::new(Arc::clone(&universe), label, start, end - 1))
    };
    Ok((
        slice(SplitLabel::Train, spec.train)?,
        slice(SplitLabel::Valid, spec.valid)?,
        slice(SplitLabel::Test, spec.test)?,
    ))
}
