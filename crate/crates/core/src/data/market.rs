use super::labels::{mean, population_std};
use super::{DataError, IndexSeries, MarketStatus};

/// Length of the market status vector for `n_indices` indices and
/// `n_intervals` lookback intervals.
pub fn market_status_len(n_indices: usize, n_intervals: usize) -> usize {
    n_indices * (1 + 4 * n_intervals)
}

/// Market status at position `as_of`.
///
/// Per index, in series order: the current price, then for each interval
/// in ascending order the price mean and population std over the trailing
/// window (inclusive of `as_of`), then the same pair for volume.
pub fn build_market_status(series: &IndexSeries, as_of: usize, intervals: &[usize]) -> Result<MarketStatus, DataError> {
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.first() == Some(&0) {
        return Err(DataError::InvalidArgument("market intervals must be at least 1 day".into()));
    }
    if as_of >= series.dates().len() {
        return Err(DataError::InvalidArgument(format!(
            "day {as_of} is outside the index calendar of {} days",
            series.dates().len()
        )));
    }
    let longest = sorted.last().copied().unwrap_or(1);
    if as_of + 1 < longest {
        return Err(DataError::HistoryTooShort(format!(
            "{longest} days needed ending at {}, only {} available ({} short)",
            series.dates()[as_of],
            as_of + 1,
            longest - as_of - 1
        )));
    }

    let mut values = Vec::with_capacity(market_status_len(series.n_indices(), sorted.len()));
    let mut buf = Vec::with_capacity(longest);
    for k in 0..series.n_indices() {
        values.push(series.price(as_of, k));
        for field in [IndexSeries::price, IndexSeries::volume] {
            for &w in &sorted {
                buf.clear();
                buf.extend((as_of + 1 - w..=as_of).map(|t| field(series, t, k)));
                values.push(mean(&buf));
                values.push(population_std(&buf));
            }
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Validation(format!(
            "non-finite market status on {}",
            series.dates()[as_of]
        )));
    }
    Ok(MarketStatus {
        values,
        as_of: series.dates()[as_of],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::business_days;
    use chrono::NaiveDate;

    #[test]
    fn intervals_are_emitted_in_ascending_order() {
        let n = 6;
        let dates = business_days(NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(), n);
        let prices: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let series = IndexSeries::new(dates, vec!["I".into()], prices, vec![1.0; n]).unwrap();
        let ms = build_market_status(&series, 5, &[4, 2]).unwrap();
        // price, then (mean, std) for d' = 2 and 4, then the volume block.
        assert_eq!(ms.values[..5], [6.0, 5.5, 0.5, 4.5, 1.25f64.sqrt()]);
        assert_eq!(ms.values.len(), market_status_len(1, 2));
    }
}
