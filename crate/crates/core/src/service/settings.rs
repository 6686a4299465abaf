//! Service settings file (TOML) and construction of a running assistant.
//!
//! ```toml
//! data_dir = "data"
//! salt = "change-me"
//! courses = ["courses/os.toml"]
//! max_concurrent = 8
//!
//! [embedding]
//! provider = "hash"        # or "http" with endpoint, model, api_key_env, dimension
//! dimension = 64
//!
//! [llm]
//! provider = "mock"        # or "http" with endpoint, model, api_key_env
//! script = "mock.toml"
//!
//! [retry]
//! max_retries = 3
//! deadline_ms = 60000
//! ```
//!
//! Relative paths resolve against the settings file's directory. API keys are
//! read from the environment variable named by `api_key_env`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::assistant::CourseAssistant;
use super::persist::{DataDir, PersistError};
use crate::gateway::{
    CompletionProvider, HttpChatProvider, LlmGateway, MockScript, RetryPolicy, ScriptedMock, DEFAULT_MAX_CONCURRENT,
};
use crate::knowledge::{
    EmbeddingProvider, HashEmbedder, HttpEmbedder, KnowledgeStore, DEFAULT_CHUNK_SIZE, HASH_EMBEDDING_DIM,
};
use crate::prompt::{ConfigError, CourseConfig};

const DEFAULT_MOCK_RESPONSE: &str = "Let's work through this step by step.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum EmbeddingSettings {
    Hash {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        dimension: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum LlmSettings {
    Mock {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_dimension() -> usize {
    HASH_EMBEDDING_DIM
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub data_dir: Option<PathBuf>,
    pub salt: String,
    pub chunk_size: usize,
    pub courses: Vec<PathBuf>,
    pub max_concurrent: usize,
    pub embedding: EmbeddingSettings,
    pub llm: LlmSettings,
    pub retry: RetryPolicy,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            data_dir: None,
            salt: "course-assistant".into(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            courses: Vec::new(),
            max_concurrent: DEFAULT_MAX_CONCURRENT,
            embedding: EmbeddingSettings::Hash { dimension: HASH_EMBEDDING_DIM },
            llm: LlmSettings::Mock { script: None },
            retry: RetryPolicy::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("cannot read settings {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid settings: {0}")]
    Parse(String),
    #[error("course config {path}: {source}")]
    Course { path: PathBuf, source: ConfigError },
    #[error("provider setup failed: {0}")]
    Provider(String),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

fn api_key(var: &Option<String>) -> Result<Option<String>, SettingsError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| SettingsError::MissingKey(name.clone())),
    }
}

impl ServiceSettings {
    pub fn from_toml_str(text: &str) -> Result<Self, SettingsError> {
        let settings: Self = toml::from_str(text).map_err(|e| SettingsError::Parse(e.to_string()))?;
        if settings.chunk_size == 0 {
            return Err(SettingsError::Parse("chunk_size must be positive".into()));
        }
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let text = std::fs::read_to_string(path).map_err(|source| SettingsError::Io { path: path.to_owned(), source })?;
        let mut settings = Self::from_toml_str(&text)?;
        settings.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(settings)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_owned()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, SettingsError> {
        Ok(match &self.embedding {
            EmbeddingSettings::Hash { dimension } => Arc::new(HashEmbedder::new(*dimension)),
            EmbeddingSettings::Http { endpoint, model, api_key_env, dimension, timeout_ms } => Arc::new(
                HttpEmbedder::new(endpoint, model, api_key(api_key_env)?, *dimension, Duration::from_millis(*timeout_ms))
                    .map_err(|e| SettingsError::Provider(e.to_string()))?,
            ),
        })
    }

    pub fn gateway(&self) -> Result<LlmGateway, SettingsError> {
        let provider: Arc<dyn CompletionProvider> = match &self.llm {
            LlmSettings::Mock { script } => {
                let script = match script {
                    Some(path) => MockScript::from_path(&self.resolve(path))
                        .map_err(|e| SettingsError::Provider(e.to_string()))?,
                    None => MockScript::new().default_response(DEFAULT_MOCK_RESPONSE),
                };
                Arc::new(ScriptedMock::new(script))
            }
            LlmSettings::Http { endpoint, model, api_key_env, timeout_ms } => Arc::new(
                HttpChatProvider::new(endpoint, model, api_key(api_key_env)?, Duration::from_millis(*timeout_ms))
                    .map_err(|e| SettingsError::Provider(e.to_string()))?,
            ),
        };
        Ok(LlmGateway::new(provider, self.retry.clone(), self.max_concurrent))
    }

    /// Course configs listed in `courses`, in order.
    pub fn course_configs(&self) -> Result<Vec<CourseConfig>, SettingsError> {
        self.courses
            .iter()
            .map(|p| {
                let path = self.resolve(p);
                CourseConfig::load(&path).map_err(|source| SettingsError::Course { path, source })
            })
            .collect()
    }

    /// Builds the assistant, restoring persisted state when `data_dir` is set.
    /// Configs saved in the data directory take precedence over the files
    /// listed in `courses`.
    pub fn build(&self) -> Result<CourseAssistant, SettingsError> {
        let embedder = self.embedder()?;
        let gateway = Arc::new(self.gateway()?);
        let mut configs = self.course_configs()?;
        let Some(dir) = &self.data_dir else {
            let store = Arc::new(KnowledgeStore::with_chunk_size(embedder, self.chunk_size));
            let assistant = CourseAssistant::new(store, gateway, self.salt.clone());
            for config in configs {
                let course = config.course_id.clone();
                assistant
                    .install_config(config)
                    .map_err(|source| SettingsError::Course { path: course.to_string().into(), source })?;
            }
            return Ok(assistant);
        };
        let data = DataDir::open(self.resolve(dir))?;
        let loaded = data.load()?;
        let store = Arc::new(match loaded.knowledge {
            Some(snapshot) => KnowledgeStore::from_snapshot(embedder, self.chunk_size, snapshot),
            None => KnowledgeStore::with_chunk_size(embedder, self.chunk_size),
        });
        for persisted in loaded.configs {
            configs.retain(|c| c.course_id != persisted.course_id);
            configs.push(persisted);
        }
        Ok(CourseAssistant::new(store, gateway, self.salt.clone()).with_data_dir(data, configs, loaded.conversations))
    }
}
