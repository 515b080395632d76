//! Versioned package store.
//!
//! Packages are addressed as `gid`, `gid/vid` or `gid/latest`, optionally
//! suffixed with `/pin`. Explicit versions are immutable once cached;
//! `latest` is served from the local cache and refreshed from a remote
//! source once the cached answer is older than the store's TTL.

mod disk;
mod memory;
mod remote;

pub use disk::{CacheMeta, PackageStore, DEFAULT_TTL_SECONDS};
pub use memory::MemoryStore;
#[cfg(feature = "http")]
pub use remote::{serve_packages, HttpRemote};
pub use remote::{DirRemote, Remote, RemoteError};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::service::DependencyGraph;

/// Name of the service configuration file at the package root.
pub const CONFIG_FILE: &str = "zoo.json";

/// Package contents: file name to bytes.
pub type Files = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("package not found: {0}")]
    PackageNotFound(String),
    #[error("remote unavailable while resolving {reference}: {detail}")]
    RemoteUnavailable { reference: String, detail: String },
    #[error("store write failed: {0}")]
    StoreWrite(String),
    #[error("invalid package config: {0}")]
    InvalidConfig(String),
    #[error("cannot pin `{0}`: pinning requires an explicit version id")]
    PinOnLatest(String),
    #[error("no pinned dependency graph saved for {0}")]
    GraphMissing(String),
    #[error("invalid version reference `{0}`")]
    InvalidRef(String),
    #[error("corrupt store entry {path}: {detail}")]
    Corrupt { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Version {
    Explicit(String),
    Latest,
}

/// `gid/[vid|latest]/pin`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VersionRef {
    pub gid: String,
    pub version: Version,
    pub pin: bool,
}

pub(crate) fn valid_gid(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

pub(crate) fn valid_vid(s: &str) -> bool {
    !s.is_empty()
        && s != "latest"
        && s != "pin"
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && s != "."
        && s != ".."
}

impl VersionRef {
    pub fn explicit(gid: &str, vid: &str) -> Self {
        Self {
            gid: gid.to_string(),
            version: Version::Explicit(vid.to_string()),
            pin: false,
        }
    }

    pub fn latest(gid: &str) -> Self {
        Self {
            gid: gid.to_string(),
            version: Version::Latest,
            pin: false,
        }
    }

    pub fn pinned(mut self) -> Self {
        self.pin = true;
        self
    }

    pub fn vid(&self) -> Option<&str> {
        match &self.version {
            Version::Explicit(v) => Some(v),
            Version::Latest => None,
        }
    }

    pub fn is_latest(&self) -> bool {
        self.version == Version::Latest
    }
}

impl fmt::Display for VersionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.version {
            Version::Explicit(v) => write!(f, "{}/{v}", self.gid)?,
            Version::Latest => write!(f, "{}/latest", self.gid)?,
        }
        if self.pin {
            f.write_str("/pin")?;
        }
        Ok(())
    }
}

impl FromStr for VersionRef {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, StoreError> {
        let bad = || StoreError::InvalidRef(s.to_string());
        let mut parts: Vec<&str> = s.split('/').collect();
        let pin = parts.len() > 1 && parts.last() == Some(&"pin");
        if pin {
            parts.pop();
        }
        let r = match parts.as_slice() {
            [gid] => VersionRef::latest(gid),
            [gid, "latest"] => VersionRef::latest(gid),
            [gid, vid] if valid_vid(vid) => VersionRef::explicit(gid, vid),
            _ => return Err(bad()),
        };
        if !valid_gid(&r.gid) {
            return Err(bad());
        }
        Ok(VersionRef { pin, ..r })
    }
}

impl Serialize for VersionRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackageManifest {
    pub gid: String,
    pub vid: String,
    pub files: Files,
    /// Unix seconds at which this version entered the local cache.
    pub fetched_at: u64,
    pub dependency_graph: Option<DependencyGraph>,
}

impl PackageManifest {
    pub fn version_ref(&self) -> VersionRef {
        VersionRef::explicit(&self.gid, &self.vid)
    }

    pub fn content_hash(&self) -> String {
        content_hash(&self.files)
    }

    pub fn config(&self) -> Option<&[u8]> {
        self.files.get(CONFIG_FILE).map(Vec::as_slice)
    }
}

/// SHA-256 over files in name order, each framed as
/// `name || 0x00 || len(u64 LE) || bytes`, hex encoded.
pub fn content_hash(files: &Files) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

/// Version id for a fresh publish: hash prefix plus a per-package counter.
pub(crate) fn make_vid(hash: &str, counter: u64) -> String {
    format!("{}-{counter}", &hash[..10])
}

/// Package id for a publish that does not name one.
pub(crate) fn make_gid(hash: &str) -> String {
    hash[..12].to_string()
}

pub(crate) fn check_files(files: &Files, service_package: bool) -> Result<(), StoreError> {
    for name in files.keys() {
        let ok =
            !name.is_empty() && name != "." && name != ".." && !name.contains(['/', '\\']) && !name.starts_with('.');
        if !ok {
            return Err(StoreError::InvalidConfig(format!("invalid file name `{name}`")));
        }
    }
    if service_package {
        let cfg = files
            .get(CONFIG_FILE)
            .ok_or_else(|| StoreError::InvalidConfig(format!("{CONFIG_FILE} missing")))?;
        crate::typecheck::parse_config(cfg).map_err(|e| StoreError::InvalidConfig(e.to_string()))?;
    }
    Ok(())
}

/// Anything that can hand out package versions and accept new ones.
pub trait PackageRepo: Send + Sync {
    fn fetch(&self, r: &VersionRef) -> Result<PackageManifest, StoreError>;

    fn publish_package(&self, files: Files, gid: Option<&str>, service_package: bool)
        -> Result<VersionRef, StoreError>;

    fn save_dependency_graph(&self, r: &VersionRef, graph: &DependencyGraph) -> Result<(), StoreError>;

    fn load_dependency_graph(&self, r: &VersionRef) -> Result<DependencyGraph, StoreError>;
}

pub(crate) fn require_explicit(r: &VersionRef) -> Result<&str, StoreError> {
    r.vid().ok_or_else(|| StoreError::PinOnLatest(r.to_string()))
}
