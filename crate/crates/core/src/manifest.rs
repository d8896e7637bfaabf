//! Dataset manifest: a CSV with header `path,fabric_type,label`.
//!
//! Relative sample paths resolve against the directory holding the manifest.

use std::cmp::Ordering;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 3] = ["path", "fabric_type", "label"];

/// Ground-truth or predicted class. Index 0 is defect-free, index 1 defective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    DefectFree,
    Defective,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::DefectFree, Label::Defective];

    pub fn index(self) -> usize {
        match self {
            Label::DefectFree => 0,
            Label::Defective => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::DefectFree),
            1 => Some(Label::Defective),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::DefectFree => "defect_free",
            Label::Defective => "defective",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "defect_free" => Ok(Label::DefectFree),
            "defective" => Ok(Label::Defective),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub path: String,
    pub fabric_type: String,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<Sample>,
    /// Directory used to resolve relative sample paths.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<Sample>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            rows,
            base_dir: base_dir.into(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Manifest(format!(
                "{}: expected header {}",
                path.display(),
                HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.deserialize::<Sample>().enumerate() {
            let row = record.map_err(|e| Error::Manifest(format!("{} row {}: {e}", path.display(), i + 2)))?;
            rows.push(row);
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { rows, base_dir })
    }

    /// Writes the manifest. Paths are stored exactly as held in `rows`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for row in &self.rows {
            writer
                .serialize(row)
                .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        }
        if self.rows.is_empty() {
            writer
                .write_record(HEADER)
                .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        let p = Path::new(&sample.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Copy of this manifest with every path made absolute, so it can be
    /// written to another directory.
    pub fn absolutized(&self) -> Manifest {
        let rows = self
            .rows
            .iter()
            .map(|s| Sample {
                path: self.resolve(s).to_string_lossy().into_owned(),
                ..s.clone()
            })
            .collect();
        Manifest {
            rows,
            base_dir: self.base_dir.clone(),
        }
    }

    /// Distinct fabric types in natural order.
    pub fn fabric_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self.rows.iter().map(|r| r.fabric_type.clone()).collect();
        types.sort_by(|a, b| natural_cmp(a, b));
        types.dedup();
        types
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Manifest {
        Manifest {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn has_both_labels(&self) -> bool {
        Label::ALL.iter().all(|l| self.rows.iter().any(|r| r.label == *l))
    }
}

/// Orders type identifiers numerically when both parse as integers,
/// lexicographically otherwise.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}
