//! Feature matrices, feature-set masks, row selectors and normalization.
//!
//! A [`FeatureMatrix`] holds one feature vector per interval. Rows are
//! features in canonical order, columns are consecutive intervals, so a
//! selector picks features and a window picks intervals. Canonical order:
//!
//! | row | name |
//! |-----|------|
//! | 0 | `ul_count` |
//! | 1 | `dl_count` |
//! | 2 | `ul_bytes` |
//! | 3 | `dl_bytes` |
//! | 4 | `ul_dl_ratio` |
//! | 5..9 | `proto_tcp`, `proto_udp`, `proto_quic`, `proto_other` |

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::{IntervalFeatures, Protocol};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Interval-level feature groups. `ProtocolCounts` expands to one row per
/// protocol in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    UlCount,
    DlCount,
    UlBytes,
    DlBytes,
    UlDlRatio,
    ProtocolCounts,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::UlCount,
        Feature::DlCount,
        Feature::UlBytes,
        Feature::DlBytes,
        Feature::UlDlRatio,
        Feature::ProtocolCounts,
    ];

    pub fn width(self) -> usize {
        match self {
            Feature::ProtocolCounts => Protocol::COUNT,
            _ => 1,
        }
    }

    fn names(self) -> Vec<String> {
        match self {
            Feature::UlCount => vec!["ul_count".into()],
            Feature::DlCount => vec!["dl_count".into()],
            Feature::UlBytes => vec!["ul_bytes".into()],
            Feature::DlBytes => vec!["dl_bytes".into()],
            Feature::UlDlRatio => vec!["ul_dl_ratio".into()],
            Feature::ProtocolCounts => Protocol::ALL
                .iter()
                .map(|p| format!("proto_{}", p.as_str().to_ascii_lowercase()))
                .collect(),
        }
    }

    fn push_values(self, iv: &IntervalFeatures, out: &mut Vec<f64>) {
        match self {
            Feature::UlCount => out.push(iv.ul_count as f64),
            Feature::DlCount => out.push(iv.dl_count as f64),
            Feature::UlBytes => out.push(iv.ul_bytes as f64),
            Feature::DlBytes => out.push(iv.dl_bytes as f64),
            Feature::UlDlRatio => out.push(iv.ul_dl_ratio),
            Feature::ProtocolCounts => out.extend(iv.protocol_counts.iter().map(|c| *c as f64)),
        }
    }
}

/// The six fixed feature sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Fs1,
    Fs2,
    Fs3,
    Fs4,
    Fs5,
    Fs6,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 6] = [
        FeatureSet::Fs1,
        FeatureSet::Fs2,
        FeatureSet::Fs3,
        FeatureSet::Fs4,
        FeatureSet::Fs5,
        FeatureSet::Fs6,
    ];

    /// Active features in canonical order.
    pub fn features(self) -> &'static [Feature] {
        use Feature::*;
        match self {
            FeatureSet::Fs1 => &[UlCount, DlCount, UlBytes, DlBytes, UlDlRatio],
            FeatureSet::Fs2 => &[UlCount, UlDlRatio],
            FeatureSet::Fs3 => &[UlCount],
            FeatureSet::Fs4 => &[UlCount, DlCount, UlDlRatio],
            FeatureSet::Fs5 => &[UlCount, DlCount],
            FeatureSet::Fs6 => &[UlCount, DlCount, ProtocolCounts],
        }
    }

    pub fn contains(self, feature: Feature) -> bool {
        self.features().contains(&feature)
    }

    pub fn width(self) -> usize {
        self.features().iter().map(|f| f.width()).sum()
    }

    pub fn feature_names(self) -> Vec<String> {
        self.features().iter().flat_map(|f| f.names()).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Fs1 => "fs1",
            FeatureSet::Fs2 => "fs2",
            FeatureSet::Fs3 => "fs3",
            FeatureSet::Fs4 => "fs4",
            FeatureSet::Fs5 => "fs5",
            FeatureSet::Fs6 => "fs6",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        FeatureSet::ALL
            .into_iter()
            .find(|fs| fs.as_str() == norm)
            .ok_or_else(|| format!("unknown feature set {s:?} (expected fs1..fs6)"))
    }
}

/// Features × intervals. Stored interval-major so that each interval's
/// feature vector is a contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    tau: f64,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from per-interval feature vectors (one `Vec` per column).
    pub fn from_columns(names: Vec<String>, tau: f64, columns: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let width = names.len();
        if let Some(bad) = columns.iter().position(|c| c.len() != width) {
            return Err(FeatureError::InvalidArgument(format!(
                "column {bad} has {} values, expected {width}",
                columns[bad].len()
            )));
        }
        Ok(FeatureMatrix {
            names,
            tau,
            n_cols: columns.len(),
            data: columns.concat(),
        })
    }

    /// Builds a matrix from per-feature rows; `rows[f][t]`.
    pub fn from_rows(names: Vec<String>, tau: f64, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        if names.len() != rows.len() {
            return Err(FeatureError::InvalidArgument(format!(
                "{} names for {} rows",
                names.len(),
                rows.len()
            )));
        }
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(FeatureError::InvalidArgument("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for t in 0..n_cols {
            data.extend(rows.iter().map(|r| r[t]));
        }
        Ok(FeatureMatrix { names, tau, n_cols, data })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of feature rows.
    pub fn n_rows(&self) -> usize {
        self.names.len()
    }

    /// Number of interval columns.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column(&self, t: usize) -> &[f64] {
        let w = self.n_rows();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn column_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.n_rows();
        &mut self.data[t * w..(t + 1) * w]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        (0..self.n_cols).map(move |t| self.column(t))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows() + row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns().map(|c| c[row]).collect()
    }

    pub fn row_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Columns `range` as a new matrix.
    pub fn window(&self, range: Range<usize>) -> FeatureMatrix {
        let w = self.n_rows();
        FeatureMatrix {
            names: self.names.clone(),
            tau: self.tau,
            n_cols: range.len(),
            data: self.data[range.start * w..range.end * w].to_vec(),
        }
    }

    /// Appends one column, dropping the oldest (rolling window update).
    pub fn roll(&mut self, column: &[f64]) {
        let w = self.n_rows();
        assert_eq!(column.len(), w, "column width");
        if self.n_cols == 0 {
            return;
        }
        self.data.drain(..w);
        self.data.extend_from_slice(column);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// features-CSV: header of feature names, then one line per interval.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.names.join(","))?;
        for col in self.columns() {
            let line: Vec<String> = col.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// One column per interval with the rows active in `fs`.
pub fn build_matrix(intervals: &[IntervalFeatures], fs: FeatureSet, tau: f64) -> Result<FeatureMatrix, FeatureError> {
    if intervals.is_empty() {
        return Err(FeatureError::InvalidArgument("no intervals".into()));
    }
    let width = fs.width();
    let mut data = Vec::with_capacity(width * intervals.len());
    for iv in intervals {
        for f in fs.features() {
            f.push_values(iv, &mut data);
        }
    }
    Ok(FeatureMatrix {
        names: fs.feature_names(),
        tau,
        n_cols: intervals.len(),
        data,
    })
}

/// Binary row mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector(pub Vec<bool>);

impl Selector {
    pub fn from_bits(bits: &[u8]) -> Self {
        Selector(bits.iter().map(|b| *b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn and(&self, other: &Selector) -> Selector {
        Selector(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }
}

/// Keeps the rows whose selector bit is set, in order.
pub fn apply_selector(x: &FeatureMatrix, s: &Selector) -> Result<FeatureMatrix, FeatureError> {
    if s.len() != x.n_rows() {
        return Err(FeatureError::InvalidArgument(format!(
            "selector has {} bits for {} rows",
            s.len(),
            x.n_rows()
        )));
    }
    let keep: Vec<usize> = (0..s.len()).filter(|i| s.0[*i]).collect();
    let names = keep.iter().map(|i| x.names[*i].clone()).collect();
    let mut data = Vec::with_capacity(keep.len() * x.n_cols);
    for col in x.columns() {
        data.extend(keep.iter().map(|i| col[*i]));
    }
    Ok(FeatureMatrix {
        names,
        tau: x.tau,
        n_cols: x.n_cols,
        data,
    })
}

/// Smallest scale used when a feature is (nearly) constant on the fit range.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Per-feature z-score: `(v - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Fits mean and population SD of each row over the columns in `train_range`.
    pub fn fit(x: &FeatureMatrix, train_range: Range<usize>) -> Result<Normalizer, FeatureError> {
        if train_range.is_empty() || train_range.end > x.n_cols() {
            return Err(FeatureError::InvalidArgument(format!(
                "training range {train_range:?} is empty or exceeds {} columns",
                x.n_cols()
            )));
        }
        let n = train_range.len() as f64;
        let w = x.n_rows();
        let mut shift = vec![0.0; w];
        let mut scale = vec![0.0; w];
        for r in 0..w {
            let vals = train_range.clone().map(|t| x.get(r, t));
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for v in vals.clone() {
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
            }
            // constant rows must center to exactly zero
            let mean = if lo == hi { lo } else { sum / n };
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            shift[r] = mean;
            scale[r] = var.sqrt().max(SCALE_FLOOR);
        }
        Ok(Normalizer { shift, scale })
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }

    pub fn transform_value(&self, row: usize, v: f64) -> f64 {
        (v - self.shift[row]) / self.scale[row]
    }

    pub fn inverse_value(&self, row: usize, v: f64) -> f64 {
        v * self.scale[row] + self.shift[row]
    }

    pub fn transform_column(&self, col: &mut [f64]) {
        for (r, v) in col.iter_mut().enumerate() {
            *v = self.transform_value(r, *v);
        }
    }

    fn check(&self, x: &FeatureMatrix) -> Result<(), FeatureError> {
        if x.n_rows() != self.width() {
            return Err(FeatureError::InvalidArgument(format!(
                "normalizer fitted on {} features, matrix has {}",
                self.width(),
                x.n_rows()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        self.check(x)?;
        let mut out = x.clone();
        for t in 0..out.n_cols() {
            self.transform_column(out.column_mut(t));
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        self.check(x)?;
        let mut out = x.clone();
        for t in 0..out.n_cols() {
            for (r, v) in out.column_mut(t).iter_mut().enumerate() {
                *v = self.inverse_value(r, *v);
            }
        }
        Ok(out)
    }
}
