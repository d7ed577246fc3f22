// SPDX-License-Identifier: Apache-2.0

//! Content-addressed blob store with linear version chains.
//!
//! Objects live at `objects/<first two hex chars>/<remaining 62>` and hold the
//! raw bytes. `refs.json` indexes every ref handed out: its hash, size,
//! optional name and optional predecessor version.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::provenance::Clock;

#[derive(Debug, Error)]
pub enum DataStoreError {
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("CORRUPT: object {0} does not hash to its key")]
    Corrupt(String),
    #[error("BAD_HASH: {0:?} is not a lowercase hex SHA-256 digest")]
    BadHash(String),
    #[error("VERSION_CONFLICT: {0}")]
    VersionConflict(String),
    #[error("FORMAT_ERROR: refs.json: {0}")]
    Format(String),
    #[error("IO_ERROR: {0}")]
    Io(#[from] io::Error),
}

impl DataStoreError {
    pub fn code(&self) -> &'static str {
        match self {
            DataStoreError::NotFound(_) => "NOT_FOUND",
            DataStoreError::Corrupt(_) => "CORRUPT",
            DataStoreError::BadHash(_) => "BAD_HASH",
            DataStoreError::VersionConflict(_) => "VERSION_CONFLICT",
            DataStoreError::Format(_) => "FORMAT_ERROR",
            DataStoreError::Io(_) => "IO_ERROR",
        }
    }
}

/// Lowercase hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContentHash(String);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn parse(text: &str) -> Result<Self, DataStoreError> {
        let ok = text.len() == 64
            && text
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(ContentHash(text.to_owned()))
        } else {
            Err(DataStoreError::BadHash(text.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ContentHash {
    type Error = DataStoreError;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        ContentHash::parse(&text)
    }
}

impl From<ContentHash> for String {
    fn from(hash: ContentHash) -> String {
        hash.0
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A reference to stored content, optionally named and linked to the version
/// it supersedes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRef {
    #[serde(rename = "hash")]
    pub content_hash: ContentHash,
    #[serde(rename = "size")]
    pub size_bytes: u64,
    pub name: Option<String>,
    pub version_of: Option<ContentHash>,
    #[serde(with = "canonical::seconds")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefsFile {
    refs: Vec<DataRef>,
}

#[derive(Debug)]
pub struct DataStore {
    root: PathBuf,
    refs: Vec<DataRef>,
    clock: Clock,
}

impl DataStore {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DataStoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("objects"))?;
        let index = root.join("refs.json");
        let refs = match fs::read_to_string(&index) {
            Ok(text) => {
                serde_json::from_str::<RefsFile>(&text)
                    .map_err(|e| DataStoreError::Format(e.to_string()))?
                    .refs
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(DataStore {
            root,
            refs,
            clock: Clock::System,
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn refs(&self) -> &[DataRef] {
        &self.refs
    }

    fn object_path(&self, hash: &ContentHash) -> PathBuf {
        let (fan, rest) = hash.as_str().split_at(2);
        self.root.join("objects").join(fan).join(rest)
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.object_path(hash).is_file()
    }

    /// Stores `bytes` and returns a ref to them. Storing the same bytes under
    /// the same name again returns the existing ref unchanged.
    pub fn put(&mut self, bytes: &[u8], name: Option<&str>) -> Result<DataRef, DataStoreError> {
        self.record(bytes, name, None)
    }

    /// Stores `bytes` as the successor of `predecessor`.
    ///
    /// Chains are linear: a predecessor may have only one successor, and the
    /// new content may not already appear in the predecessor's history.
    pub fn new_version(
        &mut self,
        predecessor: &ContentHash,
        bytes: &[u8],
        name: Option<&str>,
    ) -> Result<DataRef, DataStoreError> {
        if !self.contains(predecessor) {
            return Err(DataStoreError::NotFound(predecessor.to_string()));
        }
        let hash = ContentHash::of(bytes);
        if let Some(existing) = self.successor(predecessor) {
            if existing.content_hash != hash {
                return Err(DataStoreError::VersionConflict(format!(
                    "{predecessor} already has successor {}",
                    existing.content_hash
                )));
            }
        }
        if self.history(predecessor)?.iter().any(|r| r.content_hash == hash) {
            return Err(DataStoreError::VersionConflict(format!(
                "{hash} already appears in the history of {predecessor}"
            )));
        }
        self.record(bytes, name, Some(predecessor.clone()))
    }

    fn record(
        &mut self,
        bytes: &[u8],
        name: Option<&str>,
        version_of: Option<ContentHash>,
    ) -> Result<DataRef, DataStoreError> {
        let hash = ContentHash::of(bytes);
        let path = self.object_path(&hash);
        if !path.is_file() {
            fs::create_dir_all(path.parent().expect("object paths have a parent"))?;
            canonical::write_atomic(&path, bytes)?;
        }
        if let Some(existing) = self.refs.iter().find(|r| {
            r.content_hash == hash && r.name.as_deref() == name && r.version_of == version_of
        }) {
            return Ok(existing.clone());
        }
        let data_ref = DataRef {
            content_hash: hash,
            size_bytes: bytes.len() as u64,
            name: name.map(str::to_owned),
            version_of,
            created_at: canonical::seconds::truncate(self.clock.now()),
        };
        self.refs.push(data_ref.clone());
        self.write_index()?;
        Ok(data_ref)
    }

    fn write_index(&self) -> Result<(), DataStoreError> {
        let text = canonical::to_string(&RefsFile {
            refs: self.refs.clone(),
        })
        .map_err(|e| DataStoreError::Format(e.to_string()))?;
        canonical::write_atomic(&self.root.join("refs.json"), text.as_bytes())?;
        Ok(())
    }

    /// Reads content back, verifying it still hashes to its key.
    pub fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, DataStoreError> {
        let bytes = match fs::read(self.object_path(hash)) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(DataStoreError::NotFound(hash.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if ContentHash::of(&bytes) != *hash {
            return Err(DataStoreError::Corrupt(hash.to_string()));
        }
        Ok(bytes)
    }

    /// The ref recorded for `hash`, preferring one that carries a version link.
    pub fn get_ref(&self, hash: &ContentHash) -> Option<&DataRef> {
        let mut matching = self.refs.iter().filter(|r| &r.content_hash == hash);
        let first = matching.next()?;
        Some(
            std::iter::once(first)
                .chain(matching)
                .find(|r| r.version_of.is_some())
                .unwrap_or(first),
        )
    }

    fn successor(&self, hash: &ContentHash) -> Option<&DataRef> {
        self.refs
            .iter()
            .find(|r| r.version_of.as_ref() == Some(hash))
    }

    /// `hash` followed by its predecessors, newest first.
    pub fn history(&self, hash: &ContentHash) -> Result<Vec<DataRef>, DataStoreError> {
        let mut out = Vec::new();
        let mut cursor = Some(hash.clone());
        while let Some(h) = cursor {
            let r = self
                .get_ref(&h)
                .ok_or_else(|| DataStoreError::NotFound(h.to_string()))?
                .clone();
            cursor = r.version_of.clone();
            out.push(r);
            if out.len() > self.refs.len() {
                return Err(DataStoreError::VersionConflict(format!(
                    "version chain of {hash} loops"
                )));
            }
        }
        Ok(out)
    }
}
