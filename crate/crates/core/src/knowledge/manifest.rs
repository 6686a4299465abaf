//! Batch ingestion manifests.
//!
//! A manifest is a CSV file with the header `title,kind,path`. Paths are
//! resolved relative to the manifest's directory and must point at UTF-8
//! plain-text or Markdown files.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::store::{DocumentKind, NewDocument};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest at record {record}: {message}")]
    Malformed { record: usize, message: String },
    #[error("{path} is empty")]
    EmptyFile { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
pub struct ManifestEntry {
    pub title: String,
    pub kind: String,
    pub path: PathBuf,
}

/// Reads the manifest and every file it references. Nothing is returned
/// unless all files load, so callers never ingest a partial set.
pub fn load_manifest(manifest: &Path) -> Result<Vec<NewDocument>, ManifestError> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => ManifestError::Io { path: manifest.to_owned(), source },
            other => ManifestError::Malformed { record: 0, message: format!("{other:?}") },
        })?;
    let mut documents = Vec::new();
    for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
        let record = i + 1;
        let entry = row.map_err(|e| ManifestError::Malformed { record, message: e.to_string() })?;
        let kind: DocumentKind =
            entry.kind.parse().map_err(|message| ManifestError::Malformed { record, message })?;
        if entry.title.is_empty() {
            return Err(ManifestError::Malformed { record, message: "empty title".into() });
        }
        let path = base.join(&entry.path);
        let raw_text = std::fs::read_to_string(&path).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        if raw_text.is_empty() {
            return Err(ManifestError::EmptyFile { path });
        }
        documents.push(NewDocument {
            title: entry.title,
            kind,
            raw_text,
            source_uri: Some(entry.path.to_string_lossy().into_owned()),
        });
    }
    Ok(documents)
}
