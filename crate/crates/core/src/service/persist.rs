//! Durable storage: one JSON file per conversation and per course config,
//! plus a snapshot of the knowledge store. Every write goes to a temporary
//! file in the target directory and is renamed into place, so a reader never
//! observes a partially written record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::model::Conversation;
use crate::knowledge::StoreSnapshot;
use crate::prompt::CourseConfig;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("storage i/o at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt record {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

#[derive(Debug, Default)]
pub struct LoadedState {
    pub configs: Vec<CourseConfig>,
    pub conversations: Vec<Conversation>,
    pub knowledge: Option<StoreSnapshot>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_owned(), source }
}

/// Ids are caller-supplied, so file names use their hex encoding.
fn file_name(id: &str) -> String {
    format!("{}.json", hex::encode(id.as_bytes()))
}

impl DataDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let root = root.into();
        for sub in ["conversations", "configs"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_atomic<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), PersistError> {
        let dir = path.parent().unwrap_or(&self.root);
        let mut file = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
        let bytes = serde_json::to_vec(value).expect("records serialize");
        file.write_all(&bytes).map_err(io_err(path))?;
        file.as_file().sync_all().map_err(io_err(path))?;
        file.persist(path).map_err(|e| PersistError::Io { path: path.to_owned(), source: e.error })?;
        Ok(())
    }

    pub fn save_conversation(&self, conversation: &Conversation) -> Result<(), PersistError> {
        let path = self.root.join("conversations").join(file_name(conversation.id.as_str()));
        self.write_atomic(&path, conversation)
    }

    pub fn save_config(&self, config: &CourseConfig) -> Result<(), PersistError> {
        let path = self.root.join("configs").join(file_name(config.course_id.as_str()));
        self.write_atomic(&path, config)
    }

    pub fn save_knowledge(&self, snapshot: &StoreSnapshot) -> Result<(), PersistError> {
        self.write_atomic(&self.root.join("knowledge.json"), snapshot)
    }

    pub fn load(&self) -> Result<LoadedState, PersistError> {
        let knowledge_path = self.root.join("knowledge.json");
        let knowledge = if knowledge_path.exists() { Some(read_json(&knowledge_path)?) } else { None };
        Ok(LoadedState {
            configs: read_dir_json(&self.root.join("configs"))?,
            conversations: read_dir_json(&self.root.join("conversations"))?,
            knowledge,
        })
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PersistError::Corrupt { path: path.to_owned(), message: e.to_string() })
}

fn read_dir_json<T: DeserializeOwned>(dir: &Path) -> Result<Vec<T>, PersistError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}
