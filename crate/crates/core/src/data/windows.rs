use super::labels::{compute_return_ratio, normalize_labels};
use super::market::build_market_status;
use super::{DataError, DateRange, IndexSeries, Panel, SampleWindow, SplitSpec};

/// Shape of the windows cut from a panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowConfig {
    /// Lookback length τ.
    pub lookback: usize,
    /// Label horizon d.
    pub horizon: usize,
    /// Market-status intervals d′.
    pub market_intervals: Vec<usize>,
    /// Let train/valid labels reach past the end of their range.
    pub allow_label_overlap: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 8,
            horizon: 5,
            market_intervals: vec![5, 10, 20, 30, 60],
            allow_label_overlap: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitWindows {
    pub train: Vec<SampleWindow>,
    pub valid: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Calendar positions inside `range` that can serve as prediction dates.
///
/// A position needs τ lookback days and the longest market interval of
/// history behind it (history may precede the range start), and its label
/// exit day `p + d` must fall inside the range. With `allow_label_overlap`
/// the exit day of train/valid windows may fall anywhere in the calendar.
pub fn eligible_positions(
    dates: &[chrono::NaiveDate],
    range: DateRange,
    kind: SplitKind,
    cfg: &WindowConfig,
) -> Vec<usize> {
    let n = dates.len();
    let history = cfg.market_intervals.iter().copied().max().unwrap_or(1).max(cfg.lookback);
    let last_in_range = dates.iter().rposition(|d| range.contains(*d));
    let Some(last_in_range) = last_in_range else {
        return Vec::new();
    };
    let exit_limit = if cfg.allow_label_overlap && kind != SplitKind::Test {
        n - 1
    } else {
        last_in_range
    };
    (0..n)
        .filter(|&p| range.contains(dates[p]) && p + 1 >= history && p + cfg.horizon <= exit_limit)
        .collect()
}

fn build_window(panel: &Panel, index: &IndexSeries, p: usize, cfg: &WindowConfig) -> Result<SampleWindow, DataError> {
    let raw_r = compute_return_ratio(panel, p, cfg.horizon)?;
    let r = normalize_labels(&raw_r)?;
    Ok(SampleWindow {
        prediction_date: panel.dates()[p],
        date_index: p,
        x: panel.lookback(p, cfg.lookback),
        market: build_market_status(index, p, &cfg.market_intervals)?,
        r,
        raw_r,
    })
}

/// Windows for one range, in date order.
pub fn windows_in_range(
    panel: &Panel,
    index: &IndexSeries,
    range: DateRange,
    kind: SplitKind,
    cfg: &WindowConfig,
) -> Result<Vec<SampleWindow>, DataError> {
    if cfg.lookback == 0 || cfg.horizon == 0 {
        return Err(DataError::InvalidArgument("lookback and horizon must be at least 1".into()));
    }
    if index.dates() != panel.dates() {
        return Err(DataError::Calendar(
            "index series must be aligned to the panel calendar".into(),
        ));
    }
    let windows = eligible_positions(panel.dates(), range, kind, cfg)
        .into_iter()
        .map(|p| build_window(panel, index, p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    if windows.is_empty() {
        return Err(DataError::NoEligibleWindows { split: kind.name() });
    }
    Ok(windows)
}

/// One window per eligible prediction date in each split.
pub fn build_windows(
    panel: &Panel,
    index: &IndexSeries,
    cfg: &WindowConfig,
    split: &SplitSpec,
) -> Result<SplitWindows, DataError> {
    Ok(SplitWindows {
        train: windows_in_range(panel, index, split.train, SplitKind::Train, cfg)?,
        valid: windows_in_range(panel, index, split.valid, SplitKind::Valid, cfg)?,
        test: windows_in_range(panel, index, split.test, SplitKind::Test, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn window_tensor_is_the_lookback_slice() {
        let m = generate_synthetic(&SyntheticConfig { n_stocks: 4, n_days: 140, ..Default::default() }).unwrap();
        let split = SplitSpec::by_fractions(m.panel.dates(), 0.6, 0.2).unwrap();
        let cfg = WindowConfig { market_intervals: vec![5, 10], ..Default::default() };
        let w = build_windows(&m.panel, &m.index, &cfg, &split).unwrap();
        let first = &w.train[0];
        assert_eq!(first.date_index, 9);
        assert_eq!(first.x, m.panel.lookback(first.date_index, cfg.lookback));
        assert!(w.train.last().unwrap().prediction_date < w.valid[0].prediction_date);
        assert!(w.valid.last().unwrap().prediction_date < w.test[0].prediction_date);
    }
}
