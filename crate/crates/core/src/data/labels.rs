use super::{DataError, Panel};

/// Cross-sections whose population standard deviation falls below this
/// normalize to the zero vector.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Return ratio `(c[end+d] − c[end+1]) / c[end+1]` for every stock, where
/// `window_end` is the position of the last lookback day.
pub fn compute_return_ratio(panel: &Panel, window_end: usize, horizon: usize) -> Result<Vec<f64>, DataError> {
    if horizon == 0 {
        return Err(DataError::InvalidArgument("label horizon must be at least 1".into()));
    }
    let exit = window_end + horizon;
    if exit >= panel.n_dates() {
        return Err(DataError::LabelUnavailable(format!(
            "horizon {horizon} from day {window_end} needs day {exit}, panel has {} days",
            panel.n_dates()
        )));
    }
    let entry = window_end + 1;
    (0..panel.n_stocks())
        .map(|u| {
            let base = panel.close(entry, u);
            if !(base > 0.0) {
                return Err(DataError::Validation(format!(
                    "non-positive base price {base} for {} on {}",
                    panel.stocks()[u],
                    panel.dates()[entry]
                )));
            }
            Ok((panel.close(exit, u) - base) / base)
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Daily cross-sectional Z-score with population standard deviation.
pub fn normalize_labels(raw: &[f64]) -> Result<Vec<f64>, DataError> {
    if raw.is_empty() {
        return Err(DataError::InvalidArgument("cannot normalize an empty cross-section".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Validation("non-finite return ratio in cross-section".into()));
    }
    let mu = mean(raw);
    let sd = population_std(raw);
    if sd < VARIANCE_FLOOR {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|v| (v - mu) / sd).collect())
}
