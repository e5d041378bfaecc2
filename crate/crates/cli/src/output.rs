//! CSV tables, histograms and the run manifest.

use std::fs;
use std::io;
use std::path::Path;

/// Scientific notation with 17 significant digits; parses back to the same `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// A table of named columns, written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(
            row.into_iter()
                .map(|c| match c {
                    Cell::Num(v) => fmt17(v),
                    Cell::Int(v) => v.to_string(),
                    Cell::Text(s) => s,
                })
                .collect(),
        );
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| io::Error::other(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Bin edges, one more than the number of bins.
    pub edges: Vec<f64>,
    pub counts: [Vec<usize>; 2],
}

/// Upper bound on the number of bins.
pub const MAX_BINS: usize = 10_000;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two series binned on shared edges, with the Freedman–Diaconis width
/// `2 IQR / cbrt(n)` of the pooled sample.
pub fn histogram(a: &[f64], b: &[f64]) -> Result<Histogram, String> {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.is_empty() {
        return Err("no samples to bin".into());
    }
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err("non-finite sample".into());
    }
    pooled.sort_by(f64::total_cmp);
    let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
    let iqr = quantile(&pooled, 0.75) - quantile(&pooled, 0.25);
    let width = 2.0 * iqr / (pooled.len() as f64).cbrt();
    let bins = if hi > lo && width > 0.0 { (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS) } else { 1 };
    let step = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * step).collect();
    edges.push(hi);
    let count = |xs: &[f64]| {
        let mut c = vec![0; bins];
        for &x in xs {
            let i = if step > 0.0 { (((x - lo) / step) as usize).min(bins - 1) } else { 0 };
            c[i] += 1;
        }
        c
    };
    Ok(Histogram { counts: [count(a), count(b)], edges })
}

impl Histogram {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["bin_low", "bin_high", "count_plain", "count_antithetic"]);
        for i in 0..self.counts[0].len() {
            t.push(vec![
                self.edges[i].into(),
                self.edges[i + 1].into(),
                self.counts[0][i].into(),
                self.counts[1][i].into(),
            ]);
        }
        t
    }
}
