//! One JSON file per scenario. Creates use a no-clobber rename so two
//! concurrent creates of the same id cannot both succeed; updates replace
//! the file atomically (last write wins).

use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid_json::GridJson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub name: String,
    pub base: GridJson,
    pub edited: GridJson,
    /// RFC 3339, UTC, nanosecond precision so string order is time order.
    pub created_at: String,
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub name: String,
    pub created_at: String,
    pub ncols: usize,
    pub nrows: usize,
    pub model_id: Option<String>,
}

impl From<&Scenario> for ScenarioSummary {
    fn from(s: &Scenario) -> Self {
        Self {
            id: s.id.clone(),
            name: s.name.clone(),
            created_at: s.created_at.clone(),
            ncols: s.edited.ncols,
            nrows: s.edited.nrows,
            model_id: s.model_id.clone(),
        }
    }
}

#[derive(Debug)]
pub enum StoreError {
    NotFound,
    Duplicate,
    Storage(String),
    Corrupt(String),
}

#[derive(Debug, Clone)]
pub struct ScenarioStore {
    dir: PathBuf,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn storage(e: std::io::Error) -> StoreError {
    StoreError::Storage(e.to_string())
}

impl ScenarioStore {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().join("scenarios");
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn staged(&self, s: &Scenario) -> Result<tempfile::NamedTempFile, StoreError> {
        let mut tmp = tempfile::Builder::new()
            .prefix(".staging-")
            .tempfile_in(&self.dir)
            .map_err(storage)?;
        let bytes = serde_json::to_vec(s).map_err(|e| StoreError::Storage(e.to_string()))?;
        tmp.write_all(&bytes).map_err(storage)?;
        tmp.as_file().sync_all().map_err(storage)?;
        Ok(tmp)
    }

    pub fn create(&self, s: &Scenario) -> Result<(), StoreError> {
        let tmp = self.staged(s)?;
        tmp.persist_noclobber(self.path(&s.id)).map_err(|e| {
            if e.error.kind() == ErrorKind::AlreadyExists {
                StoreError::Duplicate
            } else {
                storage(e.error)
            }
        })?;
        Ok(())
    }

    pub fn replace(&self, s: &Scenario) -> Result<(), StoreError> {
        if !self.path(&s.id).exists() {
            return Err(StoreError::NotFound);
        }
        let tmp = self.staged(s)?;
        tmp.persist(self.path(&s.id)).map_err(|e| storage(e.error))?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Scenario, StoreError> {
        let bytes = match std::fs::read(self.path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotFound),
            Err(e) => return Err(storage(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("{id}: {e}")))
    }

    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        match std::fs::remove_file(self.path(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(StoreError::NotFound),
            Err(e) => Err(storage(e)),
        }
    }

    /// Summaries sorted by creation time, then id.
    pub fn list(&self) -> Result<Vec<ScenarioSummary>, StoreError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(storage)? {
            let path = entry.map_err(storage)?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if path.extension().and_then(|e| e.to_str()) != Some("json") || !valid_id(stem) {
                continue;
            }
            match self.get(stem) {
                Ok(s) => out.push(ScenarioSummary::from(&s)),
                // deleted between read_dir and read
                Err(StoreError::NotFound) => {}
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}
