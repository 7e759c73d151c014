//! Per-epoch evaluation records and their CSV serialization.
//!
//! Every evaluation produces one row; the CSV header is fixed so downstream
//! plotting scripts can rely on column names. Floats are rendered with six
//! decimal places, which keeps files byte-identical across repeat runs of a
//! seeded experiment.

use std::path::Path;

use crate::checkpoint::atomic_write;
use crate::error::{Error, Result};

/// Exact first line of every metrics file.
pub const CSV_HEADER: &str = "epoch,split,accuracy,xent,msse,seconds";

/// One evaluation of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub xent: f64,
    pub msse: f64,
    pub seconds: f64,
}

impl MetricsRow {
    /// Build a row, rejecting out-of-range values.
    pub fn new(
        epoch: usize,
        split: impl Into<String>,
        accuracy: f64,
        xent: f64,
        msse: f64,
        seconds: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Config(format!("accuracy {accuracy} outside [0, 1]")));
        }
        if !msse.is_finite() || msse < 0.0 {
            return Err(Error::Config(format!("MSSE {msse} must be finite and non-negative")));
        }
        if !xent.is_finite() || !seconds.is_finite() {
            return Err(Error::Config(format!("non-finite metrics: xent {xent}, seconds {seconds}")));
        }
        Ok(MetricsRow { epoch, split: split.into(), accuracy, xent, msse, seconds })
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.split, self.accuracy, self.xent, self.msse, self.seconds
        )
    }
}

/// Render rows as a complete CSV document.
pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Atomically write rows as a CSV file.
pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    atomic_write(path, render_csv(rows).as_bytes())
}
