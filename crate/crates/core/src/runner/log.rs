//! Append-only energy log, one record per geometry walker per step.

use std::io::Write;

use crate::error::RunnerError;

pub const CSV_HEADER: &str = "step,geom_id,param,energy,variance,stderr,acceptance,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub step: u64,
    pub geom_id: usize,
    /// Scanned geometry parameter (or the list index for fixed geometries).
    pub param: f64,
    pub energy: f64,
    pub variance: f64,
    pub std_error: f64,
    pub acceptance: f64,
    pub seconds: f64,
}

impl EnergyRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.geom_id,
            self.param,
            self.energy,
            self.variance,
            self.std_error,
            self.acceptance,
            self.seconds
        )
    }
}

/// Funnels records from the training loop into a CSV file.
pub struct EnergyLog {
    out: Option<std::io::BufWriter<std::fs::File>>,
    pub records: Vec<EnergyRecord>,
}

impl EnergyLog {
    /// In-memory log only.
    pub fn memory() -> EnergyLog {
        EnergyLog {
            out: None,
            records: Vec::new(),
        }
    }

    pub fn create(path: &std::path::Path) -> Result<EnergyLog, RunnerError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(EnergyLog {
            out: Some(out),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, record: EnergyRecord) -> Result<(), RunnerError> {
        if let Some(out) = &mut self.out {
            writeln!(out, "{}", record.csv_row())?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), RunnerError> {
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format_matches_header() {
        let record = EnergyRecord {
            step: 3,
            geom_id: 1,
            param: 1.25,
            energy: -0.5,
            variance: 1e-4,
            std_error: 1e-5,
            acceptance: 0.51,
            seconds: 0.125,
        };
        let row = record.csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("3,1,1.25,-0.5,"));
    }
}
