//! Task splits as CSV: header `f0,...,f{d-1},label`, one row per example.
//!
//! A family directory holds `task{k}_{train,val,test}.csv` for every task
//! plus `family.json` with the shape needed to read them back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use forkmerge_core::tasks::{DataSplit, SplitKind, Targets, TaskFamily, TaskSplits};
use forkmerge_core::TaskId;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {reason}")]
    Line { path: PathBuf, line: u64, reason: String },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyShape {
    pub n_tasks: usize,
    pub input_dim: usize,
    pub n_classes: usize,
}

pub fn split_file_name(task: TaskId, kind: SplitKind) -> String {
    format!("task{}_{}.csv", task.0, kind.name())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => DataError::Line {
            path: path.to_path_buf(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

pub fn write_split(path: &Path, split: &DataSplit) -> Result<(), DataError> {
    let labels = split.labels().ok_or_else(|| DataError::Invalid {
        path: path.to_path_buf(),
        reason: "only classification splits can be written".into(),
    })?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<String> = (0..split.input_dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (r, label) in labels.iter().enumerate() {
        let mut row: Vec<String> = split.row(r).iter().map(|v| format!("{v:?}")).collect();
        row.push(label.to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_split(path: &Path, task: TaskId, input_dim: usize, n_classes: usize) -> Result<DataSplit, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut expected: Vec<String> = (0..input_dim).map(|i| format!("f{i}")).collect();
    expected.push("label".into());
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DataError::Line {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| DataError::Line {
            path: path.to_path_buf(),
            line,
            reason,
        };
        for (i, cell) in record.iter().take(input_dim).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| bad(format!("f{i}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("f{i}: value is not finite")));
            }
            inputs.push(v);
        }
        let cell = &record[input_dim];
        let label: usize = cell
            .trim()
            .parse()
            .map_err(|_| bad(format!("label: `{cell}` is not a class index")))?;
        if label >= n_classes {
            return Err(bad(format!("label {label} is outside 0..{n_classes}")));
        }
        labels.push(label);
    }
    DataSplit::new(task, input_dim, inputs, Targets::Labels { labels, n_classes }).map_err(|e| DataError::Invalid {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_family(dir: &Path, family: &TaskFamily) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let shape = FamilyShape {
        n_tasks: family.n_tasks(),
        input_dim: family.input_dim(),
        n_classes: family.n_classes().ok_or_else(|| DataError::Invalid {
            path: dir.to_path_buf(),
            reason: "family is not a classification family".into(),
        })?,
    };
    let meta = dir.join("family.json");
    let json = serde_json::to_string_pretty(&shape).expect("shape serializes");
    std::fs::write(&meta, json + "\n").map_err(io_err(&meta))?;
    for task in family.task_ids() {
        let splits = family.task(task).expect("listed task");
        for kind in SplitKind::ALL {
            write_split(&dir.join(split_file_name(task, kind)), splits.get(kind))?;
        }
    }
    Ok(())
}

pub fn read_family(dir: &Path) -> Result<TaskFamily, DataError> {
    let meta = dir.join("family.json");
    let text = std::fs::read_to_string(&meta).map_err(io_err(&meta))?;
    let shape: FamilyShape = serde_json::from_str(&text).map_err(|e| DataError::Line {
        path: meta.clone(),
        line: e.line() as u64,
        reason: e.to_string(),
    })?;
    let mut tasks = Vec::with_capacity(shape.n_tasks);
    for k in 0..shape.n_tasks {
        let task = TaskId(k as u32);
        let read = |kind| {
            read_split(
                &dir.join(split_file_name(task, kind)),
                task,
                shape.input_dim,
                shape.n_classes,
            )
        };
        tasks.push(TaskSplits {
            train: read(SplitKind::Train)?,
            val: read(SplitKind::Val)?,
            test: read(SplitKind::Test)?,
        });
    }
    TaskFamily::new(tasks).map_err(|e| DataError::Invalid {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes `contents` to `path` followed by a newline, creating parents.
pub(crate) fn write_text(path: &Path, contents: &str) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}
