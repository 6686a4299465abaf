//! Course assistant service: educator-curated retrieval, mode-aware question
//! dispatching with homework detection, prompt assembly, a provider-agnostic
//! model gateway, structured responses and interaction analytics.

pub mod ids;
pub mod knowledge;
pub mod dispatch;
pub mod gateway;
pub mod prompt;
pub mod response;
pub mod service;
pub mod analytics;
