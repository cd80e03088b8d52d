use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-epoch loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: u8,
    pub loss_name: String,
    pub value: f64,
}

/// Per-epoch mean losses, persisted as CSV `epoch,stage,loss_name,value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub fn push(&mut self, epoch: usize, stage: u8, loss_name: &str, value: f64) {
        self.records.push(LossRecord {
            epoch,
            stage,
            loss_name: loss_name.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: LossLog) {
        self.records.extend(other.records);
    }

    /// Values of one loss in epoch order.
    pub fn series(&self, stage: u8, loss_name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage && r.loss_name == loss_name)
            .map(|r| r.value)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let records = r.deserialize().collect::<std::result::Result<Vec<LossRecord>, _>>()?;
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_header() {
        let mut log = LossLog::default();
        log.push(0, 1, "mse", 0.125);
        log.push(1, 1, "mse", 0.0625);
        log.push(0, 2, "morph_constrained", 0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("losses.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,stage,loss_name,value\n"));
        assert_eq!(LossLog::read_csv(&path).unwrap(), log);
        assert_eq!(log.series(1, "mse"), vec![0.125, 0.0625]);
    }
}
