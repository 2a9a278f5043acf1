use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::TrainError;

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub l2: f64,
    pub l1: f64,
    pub val_ade: Option<f64>,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,d_loss,g_adv,l2,l1,val_ade";

    /// Full-precision row; `val_ade` is empty when no validation ran.
    pub fn csv_row(&self) -> String {
        let val = self.val_ade.map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "{},{:e},{:e},{:e},{:e},{}",
            self.epoch, self.d_loss, self.g_adv, self.l2, self.l1, val
        )
    }
}

/// Append-only CSV of [`EpochMetrics`], flushed after every line.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Creates (or truncates) the file and writes the header.
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let io = |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io)?;
        writeln!(file, "{}", EpochMetrics::CSV_HEADER).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<(), TrainError> {
        writeln!(self.file, "{}", m.csv_row())
            .and_then(|_| self.file.flush())
            .map_err(|source| TrainError::Io {
                path: self.path.clone(),
                source,
            })
    }
}
