//! Result records, merge history rows and their CSV files.

use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const RECORDS_FILE: &str = "records.csv";
pub const MERGE_HISTORY_DIR: &str = "merge_history";
pub const LAMBDA_TRAJECTORY_FILE: &str = "lambda_trajectory.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// One evaluated model: `method,seed,task_id,split,metric,value,tg,psearch_evals,wall_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub seed: u64,
    pub task_id: u32,
    pub split: String,
    pub metric: String,
    /// NaN when the run diverged.
    pub value: f64,
    /// Transfer gain in points against the same seed's STL record.
    pub tg: Option<f64>,
    pub psearch_evals: usize,
    pub wall_s: f64,
}

impl ResultRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_result(&self, other: &ResultRecord) -> bool {
        let value_eq = self.value.to_bits() == other.value.to_bits() || (self.value.is_nan() && other.value.is_nan());
        self.method == other.method
            && self.seed == other.seed
            && self.task_id == other.task_id
            && self.split == other.split
            && self.metric == other.metric
            && value_eq
            && self.tg.map(f64::to_bits) == other.tg.map(f64::to_bits)
            && self.psearch_evals == other.psearch_evals
    }
}

/// `round,branch_id,candidate_lambda_or_coeff,val_perf,chosen`.
///
/// Per round there is one row per live branch (its merge coefficient and
/// standalone validation score), then one row per candidate the search
/// evaluated. Two-branch searches log each λ tried under the auxiliary
/// branch's id; greedy searches log a single `merged` row. Exactly one row
/// per round has `chosen = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeHistoryRow {
    pub round: usize,
    pub branch_id: String,
    /// Empty on the `merged` row.
    pub candidate_lambda_or_coeff: Option<f64>,
    pub val_perf: f64,
    pub chosen: u8,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Appends records one at a time, flushing after each so a crash loses at
/// most the run in progress.
pub struct RecordWriter {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl RecordWriter {
    /// Starts a fresh file at `path`.
    pub fn create(path: &Path) -> Result<Self, RecordError> {
        let file = File::create(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(RecordWriter {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(BufWriter::new(file)),
        })
    }

    /// Continues an existing file, writing the header only if it is empty.
    pub fn append(path: &Path) -> Result<Self, RecordError> {
        let io = |source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let empty = file.metadata().map_err(io)?.len() == 0;
        let writer = csv::WriterBuilder::new()
            .has_headers(empty)
            .from_writer(BufWriter::new(file));
        Ok(RecordWriter {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn write(&mut self, record: &ResultRecord) -> Result<(), RecordError> {
        self.writer.serialize(record).map_err(|source| RecordError::Csv {
            path: self.path.clone(),
            source,
        })?;
        self.writer.flush().map_err(|source| RecordError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>, RecordError> {
    read_csv(path)
}

pub fn write_merge_history(path: &Path, rows: &[MergeHistoryRow]) -> Result<(), RecordError> {
    let csv_err = |source| RecordError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| RecordError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_merge_history(path: &Path) -> Result<Vec<MergeHistoryRow>, RecordError> {
    read_csv(path)
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let csv_err = |source| RecordError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

pub fn merge_history_path(dir: &Path, method: &str, seed: u64) -> PathBuf {
    dir.join(MERGE_HISTORY_DIR).join(format!("{method}_seed{seed}.csv"))
}
