use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Result, VpnError};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,test_acc,seconds";

/// Summary of one completed epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Clean (no-noise) test accuracy, for modes that train a generator.
    pub clean_test_acc: Option<f64>,
    pub seconds: f64,
    pub batch_losses: Vec<f64>,
    /// Sample rows pushed through the base model by the training steps.
    pub base_forward_rows: u64,
    pub generator_forward_rows: u64,
}

impl EpochRecord {
    /// Population variance of the per-batch losses.
    pub fn batch_loss_variance(&self) -> f64 {
        let n = self.batch_losses.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.batch_losses.iter().sum::<f64>() / n;
        self.batch_losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    records: Vec<EpochRecord>,
    best: Option<usize>,
}

impl RunMetrics {
    pub fn new() -> Self {
        RunMetrics::default()
    }

    /// Appends a record; epochs must arrive in order starting at 1.
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if record.epoch != self.records.len() + 1 {
            return Err(VpnError::Contract(format!(
                "epoch {} recorded after {} epochs",
                record.epoch,
                self.records.len()
            )));
        }
        let improves = self
            .best_record()
            .is_none_or(|b| record.val_acc > b.val_acc);
        if improves {
            self.best = Some(self.records.len());
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Epoch with the highest validation accuracy (earliest on ties).
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// Test accuracy of the validation-selected epoch.
    pub fn selected_test_accuracy(&self) -> Option<f64> {
        self.best_record().map(|r| r.test_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_acc, r.test_acc, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Same records ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &RunMetrics) -> bool {
        let strip = |m: &RunMetrics| -> Vec<EpochRecord> {
            m.records
                .iter()
                .map(|r| EpochRecord {
                    seconds: 0.0,
                    ..r.clone()
                })
                .collect()
        };
        self.best == other.best && strip(self) == strip(other)
    }
}
