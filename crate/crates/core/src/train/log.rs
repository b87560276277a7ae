use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::seqdata::write_atomic;

/// Per-epoch training record. Row 0 scores the starting weights; row `k`
/// holds the mean training losses of epoch `k` and the validation loss
/// after it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

pub const PRETRAIN_COLUMNS: [&str; 6] = ["epoch", "lr", "cc1", "cc2", "combined", "val_combined"];
pub const FINETUNE_COLUMNS: [&str; 7] = ["epoch", "lr", "recon", "cc1", "cc2", "total", "val_total"];

impl TrainLog {
    pub fn new(columns: &[&'static str]) -> Self {
        TrainLog {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "log row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if i == 0 {
                    let _ = write!(out, "{}", *v as u64);
                } else {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())?;
        Ok(())
    }
}
