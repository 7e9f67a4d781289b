//! Dataset index: which cases exist, where their files live, which domain
//! and split they belong to.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::DomainTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One case: a volume stem path, an optional label stem path, and its
/// domain/split assignment. Paths are stems in the volume format's sense.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub volume: PathBuf,
    pub label: Option<PathBuf>,
    pub domain: DomainTag,
    pub split: Split,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub records: Vec<CaseRecord>,
}

impl DatasetIndex {
    pub fn new(records: Vec<CaseRecord>) -> Result<Self> {
        let index = Self { records };
        index.validate()?;
        Ok(index)
    }

    /// Enforces the split contract: unique ids within a split, labels on
    /// every source-train record, no labels on target-train records (target
    /// ground truth must stay invisible to training).
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<(Split, &str)> = HashSet::new();
        for r in &self.records {
            if !seen.insert((r.split, r.case_id.as_str())) {
                return Err(Error::invalid(format!(
                    "duplicate case_id `{}` in split {}",
                    r.case_id,
                    r.split.as_str()
                )));
            }
            if r.domain == DomainTag::Source && r.split == Split::Train && r.label.is_none() {
                return Err(Error::invalid(format!(
                    "source-train case `{}` must have a label",
                    r.case_id
                )));
            }
            if r.domain == DomainTag::Target && r.split == Split::Train && r.label.is_some() {
                return Err(Error::invalid(format!(
                    "target-train case `{}` must not carry a label",
                    r.case_id
                )));
            }
        }
        Ok(())
    }

    pub fn select(&self, domain: DomainTag, split: Split) -> Vec<&CaseRecord> {
        self.records
            .iter()
            .filter(|r| r.domain == domain && r.split == split)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let index: DatasetIndex = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        index.validate()?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
