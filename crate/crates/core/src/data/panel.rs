use chrono::NaiveDate;

use super::DataError;
use crate::numerics::Tensor;

/// Date × stock × feature market universe with per-stock closes.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    dates: Vec<NaiveDate>,
    stocks: Vec<String>,
    n_features: usize,
    /// Row-major `[date, stock, feature]`.
    features: Vec<f64>,
    /// Row-major `[date, stock]`.
    closes: Vec<f64>,
}

fn check_increasing(dates: &[NaiveDate], what: &str) -> Result<(), DataError> {
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(DataError::Validation(format!(
            "{what} dates must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl Panel {
    pub fn new(
        dates: Vec<NaiveDate>,
        stocks: Vec<String>,
        n_features: usize,
        features: Vec<f64>,
        closes: Vec<f64>,
    ) -> Result<Self, DataError> {
        check_increasing(&dates, "panel")?;
        let (t, m) = (dates.len(), stocks.len());
        if m == 0 || n_features == 0 {
            return Err(DataError::Validation("panel needs at least one stock and one feature".into()));
        }
        if features.len() != t * m * n_features || closes.len() != t * m {
            return Err(DataError::Validation(format!(
                "panel arrays do not match {t} dates × {m} stocks × {n_features} features"
            )));
        }
        for (i, &c) in closes.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(DataError::Validation(format!(
                    "close for {} on {} must be positive and finite, got {c}",
                    stocks[i % m],
                    dates[i / m]
                )));
            }
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            let per_date = m * n_features;
            return Err(DataError::Validation(format!(
                "feature f_{} for {} on {} is not finite",
                i % n_features,
                stocks[(i % per_date) / n_features],
                dates[i / per_date]
            )));
        }
        Ok(Self {
            dates,
            stocks,
            n_features,
            features,
            closes,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn stocks(&self) -> &[String] {
        &self.stocks
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self, date: usize, stock: usize) -> &[f64] {
        let start = (date * self.stocks.len() + stock) * self.n_features;
        &self.features[start..start + self.n_features]
    }

    pub fn close(&self, date: usize, stock: usize) -> f64 {
        self.closes[date * self.stocks.len() + stock]
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Lookback tensor `[M, len, F]` for the `len` days ending at `end`.
    pub fn lookback(&self, end: usize, len: usize) -> Tensor {
        let (m, f) = (self.n_stocks(), self.n_features);
        let start = end + 1 - len;
        let mut values = Vec::with_capacity(m * len * f);
        for u in 0..m {
            for t in start..=end {
                values.extend_from_slice(self.features(t, u));
            }
        }
        Tensor::new(vec![m, len, f], values).expect("lookback shape")
    }
}

/// Market index prices and trading volumes on a trading calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    dates: Vec<NaiveDate>,
    indices: Vec<String>,
    /// Row-major `[date, index]`.
    prices: Vec<f64>,
    volumes: Vec<f64>,
}

impl IndexSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        indices: Vec<String>,
        prices: Vec<f64>,
        volumes: Vec<f64>,
    ) -> Result<Self, DataError> {
        check_increasing(&dates, "index")?;
        let (t, k) = (dates.len(), indices.len());
        if k == 0 {
            return Err(DataError::Validation("index series needs at least one index".into()));
        }
        if prices.len() != t * k || volumes.len() != t * k {
            return Err(DataError::Validation(format!(
                "index arrays do not match {t} dates × {k} indices"
            )));
        }
        for i in 0..t * k {
            if !(prices[i].is_finite() && prices[i] > 0.0) {
                return Err(DataError::Validation(format!(
                    "price of index {} on {} must be positive, got {}",
                    indices[i % k],
                    dates[i / k],
                    prices[i]
                )));
            }
            if !(volumes[i].is_finite() && volumes[i] >= 0.0) {
                return Err(DataError::Validation(format!(
                    "volume of index {} on {} must be non-negative, got {}",
                    indices[i % k],
                    dates[i / k],
                    volumes[i]
                )));
            }
        }
        Ok(Self {
            dates,
            indices,
            prices,
            volumes,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn indices(&self) -> &[String] {
        &self.indices
    }

    pub fn n_indices(&self) -> usize {
        self.indices.len()
    }

    pub fn price(&self, date: usize, index: usize) -> f64 {
        self.prices[date * self.indices.len() + index]
    }

    pub fn volume(&self, date: usize, index: usize) -> f64 {
        self.volumes[date * self.indices.len() + index]
    }

    /// Restricts the series to `calendar`, which must be a subset of its dates.
    pub fn aligned_to(&self, calendar: &[NaiveDate]) -> Result<Self, DataError> {
        let k = self.indices.len();
        let mut prices = Vec::with_capacity(calendar.len() * k);
        let mut volumes = Vec::with_capacity(calendar.len() * k);
        for d in calendar {
            let t = self.dates.binary_search(d).map_err(|_| {
                DataError::Calendar(format!("index series has no row for panel date {d}"))
            })?;
            prices.extend_from_slice(&self.prices[t * k..(t + 1) * k]);
            volumes.extend_from_slice(&self.volumes[t * k..(t + 1) * k]);
        }
        Self::new(calendar.to_vec(), self.indices.clone(), prices, volumes)
    }
}

/// Market status vector `m` as of one trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketStatus {
    pub values: Vec<f64>,
    pub as_of: NaiveDate,
}

/// One prediction date's model input and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub prediction_date: NaiveDate,
    /// Position of `prediction_date` in the panel calendar.
    pub date_index: usize,
    /// Lookback features `[M, τ, F]`.
    pub x: Tensor,
    pub market: MarketStatus,
    /// Cross-sectionally Z-scored labels.
    pub r: Vec<f64>,
    /// Raw return ratios.
    pub raw_r: Vec<f64>,
}

impl SampleWindow {
    pub fn n_stocks(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn lookback(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.x.shape()[2]
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Chronologically ordered, disjoint train/valid/test ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: DateRange,
    pub valid: DateRange,
    pub test: DateRange,
}

impl SplitSpec {
    pub fn new(train: DateRange, valid: DateRange, test: DateRange) -> Result<Self, DataError> {
        for (name, r) in [("train", train), ("valid", valid), ("test", test)] {
            if r.start > r.end {
                return Err(DataError::InvalidArgument(format!(
                    "{name} range starts {} after it ends {}",
                    r.start, r.end
                )));
            }
        }
        if train.end >= valid.start || valid.end >= test.start {
            return Err(DataError::InvalidArgument(
                "split ranges must be disjoint and ordered train < valid < test".into(),
            ));
        }
        Ok(Self { train, valid, test })
    }

    /// Splits a calendar by fractions of its length; test takes the remainder.
    pub fn by_fractions(dates: &[NaiveDate], train: f64, valid: f64) -> Result<Self, DataError> {
        let n = dates.len();
        if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "fractions train={train}, valid={valid} must be positive and sum below 1"
            )));
        }
        let n_train = (n as f64 * train).round() as usize;
        let n_valid = (n as f64 * valid).round() as usize;
        if n_train == 0 || n_valid == 0 || n_train + n_valid >= n {
            return Err(DataError::InvalidArgument(format!(
                "calendar of {n} days is too short to split"
            )));
        }
        Self::new(
            DateRange {
                start: dates[0],
                end: dates[n_train - 1],
            },
            DateRange {
                start: dates[n_train],
                end: dates[n_train + n_valid - 1],
            },
            DateRange {
                start: dates[n_train + n_valid],
                end: dates[n - 1],
            },
        )
    }
}
