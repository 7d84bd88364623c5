//! Cross-time correlation maps `I_{u←v}[i, j] = S¹_v[i, j] · S²_i[u, v]`
//! and their export as CSV matrices and plain-text graymaps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("index out of range: {0}")]
    Index(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How attention heads are combined before forming a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadMode {
    #[default]
    Mean,
    /// A single intra-stock head and a single inter-stock head.
    Head { intra: usize, inter: usize },
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ExplainError> {
        if values.len() != rows * cols {
            return Err(ExplainError::Shape(format!(
                "{} values for a {rows}×{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossTimeMap {
    pub target: usize,
    pub source: usize,
    /// `τ × τ`; rows are target time `i`, columns source time `j`.
    pub matrix: Matrix,
    pub head_mode: HeadMode,
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4], ExplainError> {
    <[usize; 4]>::try_from(t.shape()).map_err(|_| ExplainError::Shape(format!("{what} has shape {:?}", t.shape())))
}

/// `S̄¹_v [τ, τ]` after head aggregation.
fn intra_block(s1: &Tensor, v: usize, mode: HeadMode) -> Result<Vec<f64>, ExplainError> {
    let [m, heads, tau, tau2] = dims4(s1, "intra-stock attention")?;
    if tau != tau2 {
        return Err(ExplainError::Shape(format!("intra-stock attention {:?} is not square", s1.shape())));
    }
    if v >= m {
        return Err(ExplainError::Index(format!("stock {v} of {m}")));
    }
    let block = |h: usize| &s1.values()[((v * heads + h) * tau) * tau..((v * heads + h + 1) * tau) * tau];
    match mode {
        HeadMode::Mean => {
            let mut out = vec![0.0; tau * tau];
            for h in 0..heads {
                for (o, x) in out.iter_mut().zip(block(h)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= heads as f64);
            Ok(out)
        }
        HeadMode::Head { intra, .. } if intra < heads => Ok(block(intra).to_vec()),
        HeadMode::Head { intra, .. } => Err(ExplainError::Index(format!("intra head {intra} of {heads}"))),
    }
}

/// `S̄²_t [M, M]` after head aggregation.
pub fn inter_map(s2: &Tensor, t: usize, mode: HeadMode) -> Result<Matrix, ExplainError> {
    let [tau, heads, m, m2] = dims4(s2, "inter-stock attention")?;
    if m != m2 {
        return Err(ExplainError::Shape(format!("inter-stock attention {:?} is not square", s2.shape())));
    }
    if t >= tau {
        return Err(ExplainError::Index(format!("time step {t} of {tau}")));
    }
    let block = |h: usize| &s2.values()[((t * heads + h) * m) * m..((t * heads + h + 1) * m) * m];
    let values = match mode {
        HeadMode::Mean => {
            let mut out = vec![0.0; m * m];
            for h in 0..heads {
                for (o, x) in out.iter_mut().zip(block(h)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= heads as f64);
            out
        }
        HeadMode::Head { inter, .. } if inter < heads => block(inter).to_vec(),
        HeadMode::Head { inter, .. } => return Err(ExplainError::Index(format!("inter head {inter} of {heads}"))),
    };
    Matrix::new(m, m, values)
}

/// `I_{u←v}` from one forward pass's `S¹ [M, N₁, τ, τ]` and `S² [τ, N₂, M, M]`.
pub fn cross_time_map(s1: &Tensor, s2: &Tensor, u: usize, v: usize, mode: HeadMode) -> Result<CrossTimeMap, ExplainError> {
    let intra = intra_block(s1, v, mode)?;
    let tau = s1.shape()[2];
    let [tau2, _, m, _] = dims4(s2, "inter-stock attention")?;
    if tau2 != tau || m != s1.shape()[0] {
        return Err(ExplainError::Shape(format!(
            "intra {:?} and inter {:?} attention disagree",
            s1.shape(),
            s2.shape()
        )));
    }
    if u >= m {
        return Err(ExplainError::Index(format!("stock {u} of {m}")));
    }
    let mut values = vec![0.0; tau * tau];
    for i in 0..tau {
        let w = inter_map(s2, i, mode)?.at(u, v);
        for j in 0..tau {
            values[i * tau + j] = intra[i * tau + j] * w;
        }
    }
    Ok(CrossTimeMap {
        target: u,
        source: v,
        matrix: Matrix::new(tau, tau, values)?,
        head_mode: mode,
    })
}

/// Mean mass per cell of each width-3 diagonal band `j − i ∈ [c−1, c+1]`,
/// averaged over `maps`. Returns `(c, mass)` for every centre whose band
/// fits inside the matrix.
pub fn band_masses(maps: &[CrossTimeMap]) -> Vec<(isize, f64)> {
    let Some(first) = maps.first() else {
        return Vec::new();
    };
    let tau = first.matrix.rows as isize;
    let mut out = Vec::new();
    for c in -(tau - 2)..=(tau - 2) {
        let mut total = 0.0;
        let mut cells = 0usize;
        for map in maps {
            for i in 0..tau {
                for j in (i + c - 1).max(0)..=(i + c + 1).min(tau - 1) {
                    total += map.matrix.at(i as usize, j as usize);
                    cells += 1;
                }
            }
        }
        if cells > 0 {
            out.push((c, total / cells as f64));
        }
    }
    out
}

/// Centre of the band with the largest mean mass (first on ties).
pub fn dominant_band(maps: &[CrossTimeMap]) -> Option<isize> {
    band_masses(maps)
        .into_iter()
        .fold(None, |best: Option<(isize, f64)>, (c, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((c, m)),
        })
        .map(|(c, _)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    GlobalMax,
    RowMax,
}

/// Pixel levels `round(255 · x / max)`, zero where the max is not positive.
pub fn to_gray_levels(matrix: &Matrix, norm: Normalization) -> Result<Vec<u8>, ExplainError> {
    if matrix.values.iter().any(|v| !v.is_finite()) {
        return Err(ExplainError::NonFinite);
    }
    let max_of = |xs: &[f64]| xs.iter().copied().fold(0.0f64, f64::max);
    let global = max_of(&matrix.values);
    let mut out = Vec::with_capacity(matrix.values.len());
    for i in 0..matrix.rows {
        let row = matrix.row(i);
        let scale = match norm {
            Normalization::GlobalMax => global,
            Normalization::RowMax => max_of(row),
        };
        for &x in row {
            let level = if scale > 0.0 { (255.0 * x.max(0.0) / scale).round() } else { 0.0 };
            out.push(level.clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Writes `matrix` as rows of comma-separated shortest round-trip decimals.
pub fn write_matrix_csv(matrix: &Matrix, path: &Path) -> Result<(), ExplainError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..matrix.rows {
        let line: Vec<String> = matrix.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix, ExplainError> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: String| ExplainError::Parse {
        path: path.display().to_string(),
        msg,
    };
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(bad(format!("line {} has {} columns", n + 1, row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), values)
}

/// Writes a plain (P2) graymap to `path` and the raw values to the sibling
/// `.csv` file. Returns the sidecar path.
pub fn export_heatmap(matrix: &Matrix, path: &Path, norm: Normalization) -> Result<PathBuf, ExplainError> {
    let levels = to_gray_levels(matrix, norm)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", matrix.cols, matrix.rows)?;
    writeln!(w, "255")?;
    for row in levels.chunks(matrix.cols.max(1)) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    let sidecar = path.with_extension("csv");
    write_matrix_csv(matrix, &sidecar)?;
    Ok(sidecar)
}

/// Reads a P2 graymap back as `(width, height, levels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), ExplainError> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: &str| ExplainError::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    };
    let mut tokens = text.lines().filter(|l| !l.starts_with('#')).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num = || -> Result<usize, ExplainError> {
        tokens
            .next()
            .ok_or_else(|| bad("truncated"))?
            .parse()
            .map_err(|_| bad("bad number"))
    };
    let (w, h, _max) = (num()?, num()?, num()?);
    let levels = (0..w * h)
        .map(|_| num().and_then(|v| u8::try_from(v).map_err(|_| bad("level above 255"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((w, h, levels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_levels_match_hand_scaling() {
        let m = Matrix::new(2, 2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(to_gray_levels(&m, Normalization::GlobalMax).unwrap(), vec![0, 64, 128, 255]);
        assert_eq!(to_gray_levels(&m, Normalization::RowMax).unwrap(), vec![0, 255, 128, 255]);
        let one = Matrix::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(to_gray_levels(&one, Normalization::GlobalMax).unwrap(), vec![255]);
        let zero = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(to_gray_levels(&zero, Normalization::GlobalMax).unwrap(), vec![0; 6]);
    }

    #[test]
    fn uniform_inter_attention_scales_intra_map() {
        let (m, tau) = (3, 2);
        let s1 = Tensor::new(vec![m, 1, tau, tau], (0..m * tau * tau).map(|k| (k % 4) as f64 / 4.0).collect()).unwrap();
        let s2 = Tensor::filled(vec![tau, 1, m, m], 1.0 / m as f64);
        let map = cross_time_map(&s1, &s2, 0, 2, HeadMode::Mean).unwrap();
        for i in 0..tau {
            for j in 0..tau {
                assert_eq!(map.matrix.at(i, j), s1.at(&[2, 0, i, j]) / m as f64);
            }
        }
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let s1 = Tensor::filled(vec![2, 1, 3, 3], 1.0 / 3.0);
        let s2 = Tensor::filled(vec![3, 1, 2, 2], 0.5);
        assert!(matches!(cross_time_map(&s1, &s2, 2, 0, HeadMode::Mean), Err(ExplainError::Index(_))));
        assert!(matches!(
            cross_time_map(&s1, &s2, 0, 0, HeadMode::Head { intra: 0, inter: 1 }),
            Err(ExplainError::Index(_))
        ));
        assert!(inter_map(&s2, 3, HeadMode::Mean).is_err());
    }

    #[test]
    fn band_centres_cover_the_matrix() {
        let tau = 4;
        let mut values = vec![0.0; tau * tau];
        for i in 2..tau {
            values[i * tau + i - 2] = 1.0;
        }
        let map = CrossTimeMap {
            target: 0,
            source: 1,
            matrix: Matrix::new(tau, tau, values).unwrap(),
            head_mode: HeadMode::Mean,
        };
        let bands = band_masses(std::slice::from_ref(&map));
        assert_eq!(bands.first().unwrap().0, -2);
        assert_eq!(bands.last().unwrap().0, 2);
        assert_eq!(dominant_band(&[map]), Some(-2));
    }
}
