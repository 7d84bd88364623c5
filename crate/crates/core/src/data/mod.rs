//! Panel data model, labels, market status, windowing, CSV ingestion and
//! the synthetic lead-lag market generator.

mod csv_io;
mod labels;
mod market;
mod panel;
mod synthetic;
mod windows;

pub use csv_io::{
    format_decimal, load_csv, load_truth_csv, write_index_csv, write_stocks_csv, write_truth_csv, MissingPolicy,
    DATE_FORMAT,
};
pub use labels::{compute_return_ratio, mean, normalize_labels, population_std, VARIANCE_FLOOR};
pub use market::{build_market_status, market_status_len};
pub use panel::{DateRange, IndexSeries, MarketStatus, Panel, SampleWindow, SplitSpec};
pub use synthetic::{business_days, generate_synthetic, LeadLag, SyntheticConfig, SyntheticMarket};
pub use windows::{build_windows, eligible_positions, windows_in_range, SplitKind, SplitWindows, WindowConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("label unavailable: {0}")]
    LabelUnavailable(String),
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("market history too short: {0}")]
    HistoryTooShort(String),
    #[error("no eligible windows for the {split} split")]
    NoEligibleWindows { split: &'static str },
    #[error("{file}:{line}: column `{column}`: {msg}")]
    Schema {
        file: String,
        line: u64,
        column: String,
        msg: String,
    },
    #[error("calendar misalignment: {0}")]
    Calendar(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
