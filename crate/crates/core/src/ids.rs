//! Opaque identifier newtypes shared across the service.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }
    };
}

string_id!(
    /// Course identifier, chosen by the educator (e.g. `cs101`).
    CourseId
);
string_id!(
    /// Document identifier. Zero-padded so lexical order matches ingestion order.
    DocumentId
);
string_id!(ChunkId);
string_id!(ConversationId);
string_id!(MessageId);
string_id!(
    /// Anonymized user reference. Never carries a raw account id.
    UserRef
);

impl ChunkId {
    pub fn for_chunk(document: &DocumentId, ordinal: usize) -> Self {
        Self(format!("{document}#{ordinal}"))
    }
}
