//! `stocks.csv`, `index.csv` and `truth.csv` readers and writers.
//!
//! Decimals are written in shortest round-trip form, right-padded with
//! zeros to at least nine significant digits, so a write-then-read cycle
//! reproduces every value exactly.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{DataError, IndexSeries, LeadLag, Panel};

/// What to do with an empty or `NaN` feature cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    ForwardFill,
}

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Decimal text with at least nine significant digits that parses back
/// to exactly `v`.
pub fn format_decimal(v: f64) -> String {
    let mut s = format!("{v}");
    let sig = s
        .trim_start_matches('-')
        .replace('.', "")
        .trim_start_matches('0')
        .len();
    if sig < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 9 - sig));
    }
    s
}

fn schema(path: &Path, line: u64, column: &str, msg: impl Into<String>) -> DataError {
    DataError::Schema {
        file: path.display().to_string(),
        line,
        column: column.to_string(),
        msg: msg.into(),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[String]) -> Result<(), DataError> {
    if got.len() != want.len() {
        return Err(schema(path, 1, "header", format!("expected {} columns {:?}, found {}", want.len(), want, got.len())));
    }
    for (g, w) in got.iter().zip(want) {
        if g.trim() != w {
            return Err(schema(path, 1, w, format!("expected column `{w}`, found `{g}`")));
        }
    }
    Ok(())
}

fn parse_date(path: &Path, line: u64, s: &str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| schema(path, line, "date", format!("`{s}` is not an ISO-8601 date: {e}")))
}

fn parse_number(path: &Path, line: u64, column: &str, s: &str) -> Result<f64, DataError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| schema(path, line, column, format!("`{s}` is not a number")))
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na")
}

struct StockRow {
    line: u64,
    close: f64,
    features: Vec<Option<f64>>,
}

/// Reads and validates a panel and its index series.
pub fn load_csv(stocks_path: &Path, index_path: &Path, missing: MissingPolicy) -> Result<(Panel, IndexSeries), DataError> {
    let panel = load_stocks(stocks_path, missing)?;
    let index = load_index(index_path)?.aligned_to(panel.dates())?;
    Ok((panel, index))
}

fn load_stocks(path: &Path, missing: MissingPolicy) -> Result<Panel, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let n_features = header.len().saturating_sub(3);
    if n_features == 0 {
        return Err(schema(path, 1, "header", "need at least one feature column f_0"));
    }
    let mut want: Vec<String> = ["date", "stock_id", "close"].iter().map(|s| s.to_string()).collect();
    want.extend((0..n_features).map(|k| format!("f_{k}")));
    check_header(path, &header, &want)?;

    let mut dates = BTreeSet::new();
    let mut stocks: Vec<String> = Vec::new();
    let mut stock_pos: HashMap<String, usize> = HashMap::new();
    let mut rows: HashMap<(NaiveDate, usize), StockRow> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != want.len() {
            return Err(schema(path, line, "row", format!("expected {} fields, found {}", want.len(), rec.len())));
        }
        let date = parse_date(path, line, &rec[0])?;
        let id = rec[1].trim().to_string();
        if id.is_empty() {
            return Err(schema(path, line, "stock_id", "empty stock id"));
        }
        if is_missing(&rec[2]) {
            return Err(schema(path, line, "close", "missing close price"));
        }
        let close = parse_number(path, line, "close", &rec[2])?;
        if !(close.is_finite() && close > 0.0) {
            return Err(schema(path, line, "close", format!("close must be positive, got {close}")));
        }
        let features = (0..n_features)
            .map(|k| {
                let cell = &rec[3 + k];
                if is_missing(cell) {
                    return Ok(None);
                }
                let v = parse_number(path, line, &want[3 + k], cell)?;
                if !v.is_finite() {
                    return Err(schema(path, line, &want[3 + k], "non-finite feature"));
                }
                Ok(Some(v))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let u = *stock_pos.entry(id.clone()).or_insert_with(|| {
            stocks.push(id.clone());
            stocks.len() - 1
        });
        dates.insert(date);
        if rows.insert((date, u), StockRow { line, close, features }).is_some() {
            return Err(schema(path, line, "stock_id", format!("duplicate row for {id} on {date}")));
        }
    }
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    if dates.is_empty() {
        return Err(schema(path, 1, "row", "no data rows"));
    }

    let m = stocks.len();
    let mut features = vec![0.0; dates.len() * m * n_features];
    let mut closes = vec![0.0; dates.len() * m];
    for (t, d) in dates.iter().enumerate() {
        for u in 0..m {
            let row = rows.get(&(*d, u)).ok_or_else(|| {
                DataError::Calendar(format!("{}: stock {} has no row on {d}", path.display(), stocks[u]))
            })?;
            closes[t * m + u] = row.close;
            for (k, cell) in row.features.iter().enumerate() {
                let slot = (t * m + u) * n_features + k;
                features[slot] = match (cell, missing) {
                    (Some(v), _) => *v,
                    (None, MissingPolicy::Reject) => {
                        return Err(schema(path, row.line, &want[3 + k], "missing feature value"));
                    }
                    (None, MissingPolicy::ForwardFill) if t > 0 => features[((t - 1) * m + u) * n_features + k],
                    (None, MissingPolicy::ForwardFill) => {
                        return Err(schema(path, row.line, &want[3 + k], "missing feature value with no earlier value to carry forward"));
                    }
                };
            }
        }
    }
    Panel::new(dates, stocks, n_features, features, closes)
}

fn load_index(path: &Path) -> Result<IndexSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let want: Vec<String> = ["date", "index_id", "price", "volume"].iter().map(|s| s.to_string()).collect();
    check_header(path, &rdr.headers()?.clone(), &want)?;
    let mut dates = BTreeSet::new();
    let mut ids: Vec<String> = Vec::new();
    let mut rows: HashMap<(NaiveDate, usize), (f64, f64)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(schema(path, line, "row", format!("expected 4 fields, found {}", rec.len())));
        }
        let date = parse_date(path, line, &rec[0])?;
        let id = rec[1].trim().to_string();
        let price = parse_number(path, line, "price", &rec[2])?;
        if !(price.is_finite() && price > 0.0) {
            return Err(schema(path, line, "price", format!("price must be positive, got {price}")));
        }
        let volume = parse_number(path, line, "volume", &rec[3])?;
        if !(volume.is_finite() && volume >= 0.0) {
            return Err(schema(path, line, "volume", format!("volume must be non-negative, got {volume}")));
        }
        let k = match ids.iter().position(|i| *i == id) {
            Some(k) => k,
            None => {
                ids.push(id.clone());
                ids.len() - 1
            }
        };
        dates.insert(date);
        if rows.insert((date, k), (price, volume)).is_some() {
            return Err(schema(path, line, "index_id", format!("duplicate row for {id} on {date}")));
        }
    }
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let k = ids.len();
    let mut prices = vec![0.0; dates.len() * k];
    let mut volumes = vec![0.0; dates.len() * k];
    for (t, d) in dates.iter().enumerate() {
        for j in 0..k {
            let (p, v) = rows.get(&(*d, j)).ok_or_else(|| {
                DataError::Calendar(format!("{}: index {} has no row on {d}", path.display(), ids[j]))
            })?;
            prices[t * k + j] = *p;
            volumes[t * k + j] = *v;
        }
    }
    IndexSeries::new(dates, ids, prices, volumes)
}

pub fn write_stocks_csv(path: &Path, panel: &Panel) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "date,stock_id,close")?;
    for k in 0..panel.n_features() {
        write!(w, ",f_{k}")?;
    }
    writeln!(w)?;
    for (t, d) in panel.dates().iter().enumerate() {
        for (u, id) in panel.stocks().iter().enumerate() {
            write!(w, "{},{},{}", d.format(DATE_FORMAT), id, format_decimal(panel.close(t, u)))?;
            for v in panel.features(t, u) {
                write!(w, ",{}", format_decimal(*v))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_index_csv(path: &Path, index: &IndexSeries) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "date,index_id,price,volume")?;
    for (t, d) in index.dates().iter().enumerate() {
        for (k, id) in index.indices().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                d.format(DATE_FORMAT),
                id,
                format_decimal(index.price(t, k)),
                format_decimal(index.volume(t, k))
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth_csv(path: &Path, truth: &[LeadLag]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "follower_id,leader_id,lag,weight")?;
    for t in truth {
        writeln!(w, "{},{},{},{}", t.follower, t.leader, t.lag, format_decimal(t.weight))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_truth_csv(path: &Path) -> Result<Vec<LeadLag>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let want: Vec<String> = ["follower_id", "leader_id", "lag", "weight"].iter().map(|s| s.to_string()).collect();
    check_header(path, &rdr.headers()?.clone(), &want)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let lag = rec[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| schema(path, line, "lag", format!("`{}` is not a day count", &rec[2])))?;
        out.push(LeadLag {
            follower: rec[0].trim().to_string(),
            leader: rec[1].trim().to_string(),
            lag,
            weight: parse_number(path, line, "weight", &rec[3])?,
        });
    }
    Ok(out)
}
