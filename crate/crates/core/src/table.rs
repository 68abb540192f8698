//! Row matrices keyed by sample, stored as CSV `traj,t,<prefix>0,<prefix>1,...`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::datasets::SampleRef;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {reason}")]
    Bad { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRows {
    pub index: Vec<SampleRef>,
    pub rows: Vec<Vec<f64>>,
}

impl SampleRows {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Floats use shortest round-trip formatting, so reading back is exact.
    pub fn write_csv(&self, path: &Path, prefix: &str) -> Result<(), TableError> {
        let bad = |reason: String| TableError::Bad {
            path: path.to_path_buf(),
            reason,
        };
        let file = fs::File::create(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend((0..self.width()).map(|i| format!("{prefix}{i}")));
        w.write_record(&header).map_err(|e| bad(e.to_string()))?;
        for (r, row) in self.index.iter().zip(&self.rows) {
            let mut rec = vec![r.traj.to_string(), r.t.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| bad(e.to_string()))?;
        }
        w.flush().map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<SampleRows, TableError> {
        let bad = |reason: String| TableError::Bad {
            path: path.to_path_buf(),
            reason,
        };
        let file = fs::File::open(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
        let width = r
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .len()
            .saturating_sub(2);
        let mut out = SampleRows {
            index: Vec::new(),
            rows: Vec::new(),
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| -> Result<f64, TableError> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("row {}: column {i} is not a number", line + 1)))
            };
            let traj = num(0)? as usize;
            let t = num(1)? as usize;
            out.index.push(SampleRef { traj, t });
            out.rows
                .push((0..width).map(|i| num(2 + i)).collect::<Result<_, _>>()?);
        }
        Ok(out)
    }
}
