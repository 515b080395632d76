//! On-disk package cache.
//!
//! Layout under the store root:
//!
//! ```text
//! <gid>/meta.json                 cache metadata for `latest`
//! <gid>/<vid>/files/*             package files
//! <gid>/<vid>/manifest.json       fetch time and content hash
//! <gid>/<vid>/graph.json          pinned dependency graph
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    check_files, content_hash, make_gid, make_vid, require_explicit, valid_gid, Files, PackageManifest, PackageRepo,
    Remote, StoreError, Version, VersionRef,
};
use crate::service::DependencyGraph;

pub const DEFAULT_TTL_SECONDS: u64 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub latest_vid: String,
    pub latest_downloaded_at: u64,
    pub ttl_seconds: u64,
}

#[derive(Serialize, Deserialize)]
struct VersionInfo {
    gid: String,
    vid: String,
    fetched_at: u64,
    content_hash: String,
}

pub struct PackageStore {
    root: PathBuf,
    remote: Option<Box<dyn Remote>>,
    ttl_seconds: u64,
    read_only: bool,
    write_lock: Mutex<()>,
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::StoreWrite(format!("{}: {e}", path.display()))
}

fn corrupt(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Write-then-rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    // package file names never start with a dot, so this cannot collide
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = path.with_file_name(format!(".{name}.partial"));
    fs::write(&tmp, bytes).map_err(|e| write_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| write_err(path, e))
}

impl PackageStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| write_err(&root, e))?;
        Ok(Self {
            root,
            remote: None,
            ttl_seconds: DEFAULT_TTL_SECONDS,
            read_only: false,
            write_lock: Mutex::new(()),
        })
    }

    pub fn with_remote(mut self, remote: impl Remote + 'static) -> Self {
        self.remote = Some(Box::new(remote));
        self
    }

    /// Panics when `ttl_seconds` is zero.
    pub fn with_ttl(mut self, ttl_seconds: u64) -> Self {
        assert!(ttl_seconds > 0, "ttl must be positive");
        self.ttl_seconds = ttl_seconds;
        self
    }

    pub fn read_only(mut self, yes: bool) -> Self {
        self.read_only = yes;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ttl_seconds(&self) -> u64 {
        self.ttl_seconds
    }

    fn gid_dir(&self, gid: &str) -> PathBuf {
        self.root.join(gid)
    }

    fn version_dir(&self, gid: &str, vid: &str) -> PathBuf {
        self.root.join(gid).join(vid)
    }

    pub fn meta(&self, gid: &str) -> Result<Option<CacheMeta>, StoreError> {
        let path = self.gid_dir(gid).join("meta.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(corrupt(&path, e)),
        }
    }

    fn write_meta(&self, gid: &str, vid: &str, now: u64) -> Result<(), StoreError> {
        let meta = CacheMeta {
            latest_vid: vid.to_string(),
            latest_downloaded_at: now,
            ttl_seconds: self.ttl_seconds,
        };
        let dir = self.gid_dir(gid);
        fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
        write_atomic(
            &dir.join("meta.json"),
            &serde_json::to_vec_pretty(&meta).expect("meta serializes"),
        )
    }

    /// Explicit versions present in the local cache, in directory order.
    pub fn versions(&self, gid: &str) -> Vec<String> {
        let mut out: Vec<String> = fs::read_dir(self.gid_dir(gid))
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().join("manifest.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        out.sort();
        out
    }

    /// Package ids present in the local cache.
    pub fn packages(&self) -> Vec<String> {
        let mut out: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|g| valid_gid(g))
            .collect();
        out.sort();
        out
    }

    fn load_local(&self, gid: &str, vid: &str) -> Result<Option<PackageManifest>, StoreError> {
        let dir = self.version_dir(gid, vid);
        let info_path = dir.join("manifest.json");
        let info: VersionInfo = match fs::read(&info_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| corrupt(&info_path, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(corrupt(&info_path, e)),
        };
        let files_dir = dir.join("files");
        let mut files = Files::new();
        for entry in fs::read_dir(&files_dir).map_err(|e| corrupt(&files_dir, e))? {
            let entry = entry.map_err(|e| corrupt(&files_dir, e))?;
            let name = entry
                .file_name()
                .into_string()
                .map_err(|_| corrupt(&entry.path(), "non UTF-8 file name"))?;
            if name.starts_with('.') {
                continue;
            }
            let bytes = fs::read(entry.path()).map_err(|e| corrupt(&entry.path(), e))?;
            files.insert(name, bytes);
        }
        if content_hash(&files) != info.content_hash {
            return Err(corrupt(&dir, "content hash mismatch"));
        }
        Ok(Some(PackageManifest {
            gid: info.gid,
            vid: info.vid,
            files,
            fetched_at: info.fetched_at,
            dependency_graph: None,
        }))
    }

    fn store_version(&self, gid: &str, vid: &str, files: &Files, now: u64) -> Result<PackageManifest, StoreError> {
        if self.read_only {
            return Err(StoreError::StoreWrite(format!(
                "store at {} is read-only",
                self.root.display()
            )));
        }
        let dir = self.version_dir(gid, vid);
        let files_dir = dir.join("files");
        fs::create_dir_all(&files_dir).map_err(|e| write_err(&files_dir, e))?;
        for (name, bytes) in files {
            write_atomic(&files_dir.join(name), bytes)?;
        }
        let info = VersionInfo {
            gid: gid.to_string(),
            vid: vid.to_string(),
            fetched_at: now,
            content_hash: content_hash(files),
        };
        // manifest.json last: its presence marks the version complete
        write_atomic(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&info).expect("info serializes"),
        )?;
        Ok(PackageManifest {
            gid: gid.to_string(),
            vid: vid.to_string(),
            files: files.clone(),
            fetched_at: now,
            dependency_graph: None,
        })
    }

    fn remote_err(&self, r: &VersionRef, detail: impl std::fmt::Display) -> StoreError {
        StoreError::RemoteUnavailable {
            reference: r.to_string(),
            detail: detail.to_string(),
        }
    }

    fn resolve_explicit(&self, r: &VersionRef, vid: &str, now: u64) -> Result<PackageManifest, StoreError> {
        if let Some(m) = self.load_local(&r.gid, vid)? {
            return Ok(m);
        }
        let remote = self
            .remote
            .as_ref()
            .ok_or_else(|| StoreError::PackageNotFound(r.to_string()))?;
        let files = remote
            .fetch(&r.gid, vid)
            .map_err(|e| self.remote_err(r, e))?
            .ok_or_else(|| StoreError::PackageNotFound(r.to_string()))?;
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        if let Some(m) = self.load_local(&r.gid, vid)? {
            return Ok(m);
        }
        self.store_version(&r.gid, vid, &files, now)
    }

    fn resolve_latest(&self, r: &VersionRef, now: u64) -> Result<PackageManifest, StoreError> {
        let meta = self.meta(&r.gid)?;
        if let Some(meta) = &meta {
            if now.saturating_sub(meta.latest_downloaded_at) < self.ttl_seconds {
                return self.cached_latest(r, meta);
            }
        }
        let Some(remote) = self.remote.as_ref() else {
            // local-only store: the newest local version is authoritative
            return match &meta {
                Some(meta) => self.cached_latest(r, meta),
                None => Err(StoreError::PackageNotFound(r.to_string())),
            };
        };
        let newest = remote.latest(&r.gid).map_err(|e| self.remote_err(r, e))?;
        let vid = match (newest, &meta) {
            (Some(vid), _) => vid,
            // known locally but not on the remote (e.g. published here)
            (None, Some(meta)) => meta.latest_vid.clone(),
            (None, None) => return Err(StoreError::PackageNotFound(r.to_string())),
        };
        let manifest = self.resolve_explicit(&VersionRef::explicit(&r.gid, &vid), &vid, now)?;
        if !self.read_only {
            let _guard = self.write_lock.lock().expect("store lock poisoned");
            self.write_meta(&r.gid, &vid, now)?;
        }
        Ok(manifest)
    }

    fn cached_latest(&self, r: &VersionRef, meta: &CacheMeta) -> Result<PackageManifest, StoreError> {
        self.load_local(&r.gid, &meta.latest_vid)?
            .ok_or_else(|| StoreError::Corrupt {
                path: self.gid_dir(&r.gid).join("meta.json").display().to_string(),
                detail: format!("latest version {} missing from cache", meta.latest_vid),
            })
    }

    /// Resolves a reference as of `now` (unix seconds).
    pub fn resolve(&self, r: &VersionRef, now: u64) -> Result<PackageManifest, StoreError> {
        if r.pin && r.is_latest() {
            return Err(StoreError::PinOnLatest(r.to_string()));
        }
        let mut manifest = match &r.version {
            Version::Explicit(vid) => self.resolve_explicit(r, vid, now)?,
            Version::Latest => self.resolve_latest(r, now)?,
        };
        if r.pin {
            manifest.dependency_graph = self.read_graph(&manifest.gid, &manifest.vid)?;
        }
        Ok(manifest)
    }

    pub fn publish_package_at(
        &self,
        files: Files,
        gid: Option<&str>,
        service_package: bool,
        now: u64,
    ) -> Result<VersionRef, StoreError> {
        check_files(&files, service_package)?;
        if self.read_only {
            return Err(StoreError::StoreWrite(format!(
                "store at {} is read-only",
                self.root.display()
            )));
        }
        let hash = content_hash(&files);
        let gid = match gid {
            Some(g) if valid_gid(g) => g.to_string(),
            Some(g) => return Err(StoreError::InvalidRef(g.to_string())),
            None => make_gid(&hash),
        };
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        let mut counter = self.versions(&gid).len() as u64 + 1;
        let vid = loop {
            let vid = make_vid(&hash, counter);
            if !self.version_dir(&gid, &vid).exists() {
                break vid;
            }
            counter += 1;
        };
        self.store_version(&gid, &vid, &files, now)?;
        self.write_meta(&gid, &vid, now)?;
        Ok(VersionRef::explicit(&gid, &vid))
    }

    fn read_graph(&self, gid: &str, vid: &str) -> Result<Option<DependencyGraph>, StoreError> {
        let path = self.version_dir(gid, vid).join("graph.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(corrupt(&path, e)),
        }
    }
}

impl PackageRepo for PackageStore {
    fn fetch(&self, r: &VersionRef) -> Result<PackageManifest, StoreError> {
        self.resolve(r, unix_now())
    }

    fn publish_package(
        &self,
        files: Files,
        gid: Option<&str>,
        service_package: bool,
    ) -> Result<VersionRef, StoreError> {
        self.publish_package_at(files, gid, service_package, unix_now())
    }

    fn save_dependency_graph(&self, r: &VersionRef, graph: &DependencyGraph) -> Result<(), StoreError> {
        let vid = require_explicit(r)?;
        if self.read_only {
            return Err(StoreError::StoreWrite(format!(
                "store at {} is read-only",
                self.root.display()
            )));
        }
        let dir = self.version_dir(&r.gid, vid);
        if !dir.join("manifest.json").is_file() {
            return Err(StoreError::PackageNotFound(r.to_string()));
        }
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        write_atomic(
            &dir.join("graph.json"),
            &serde_json::to_vec_pretty(graph).expect("graph serializes"),
        )
    }

    fn load_dependency_graph(&self, r: &VersionRef) -> Result<DependencyGraph, StoreError> {
        let vid = require_explicit(r)?;
        self.read_graph(&r.gid, vid)?
            .ok_or_else(|| StoreError::GraphMissing(r.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::DepNode;

    fn files(content: &str) -> Files {
        [
            ("zoo.json".to_string(), br#"{"f": "int -> int"}"#.to_vec()),
            ("main.ml".to_string(), content.as_bytes().to_vec()),
        ]
        .into()
    }

    #[test]
    fn publish_then_resolve_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        let f = files("let f x = x");
        let r = store.publish_package(f.clone(), Some("abc12"), true).unwrap();
        let m = store.resolve(&r, 10).unwrap();
        assert_eq!(m.files, f);
        assert!(dir
            .path()
            .join("abc12")
            .join(r.vid().unwrap())
            .join("files/zoo.json")
            .is_file());
        assert!(dir.path().join("abc12/meta.json").is_file());
    }

    #[test]
    fn identical_content_gets_distinct_vids() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        let a = store.publish_package(files("x"), Some("abc12"), true).unwrap();
        let b = store.publish_package(files("x"), Some("abc12"), true).unwrap();
        assert_ne!(a, b);
        let hash = content_hash(&files("x"));
        assert_eq!(a.vid().unwrap(), format!("{}-1", &hash[..10]));
        assert_eq!(b.vid().unwrap(), format!("{}-2", &hash[..10]));
        // latest follows the newest publish
        assert_eq!(
            store.resolve(&VersionRef::latest("abc12"), 20).unwrap().vid,
            b.vid().unwrap()
        );
    }

    #[test]
    fn service_package_needs_config() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        let plain: Files = [("main.ml".to_string(), b"1".to_vec())].into();
        assert!(matches!(
            store.publish_package(plain.clone(), None, true),
            Err(StoreError::InvalidConfig(_))
        ));
        let r = store.publish_package(plain, None, false).unwrap();
        assert_eq!(r.gid.len(), 12);
    }

    #[test]
    fn read_only_store_rejects_writes() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap().read_only(true);
        assert!(matches!(
            store.publish_package(files("x"), None, true),
            Err(StoreError::StoreWrite(_))
        ));
    }

    #[test]
    fn missing_package() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.resolve(&"zzzzz".parse().unwrap(), 0),
            Err(StoreError::PackageNotFound(_))
        ));
        assert!(matches!(
            store.resolve(&"zzzzz/1".parse().unwrap(), 0),
            Err(StoreError::PackageNotFound(_))
        ));
    }

    #[test]
    fn pinned_graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        let r = store.publish_package(files("x"), Some("abc12"), true).unwrap();
        assert!(matches!(
            store.load_dependency_graph(&r),
            Err(StoreError::GraphMissing(_))
        ));
        let mut g = DependencyGraph::new();
        let a = g.add_node(DepNode::new("a", r.to_string(), 0));
        let b = g.add_node(DepNode::new("f", r.to_string(), 1));
        g.add_edge(a, b, 0).unwrap();
        store.save_dependency_graph(&r, &g).unwrap();
        assert_eq!(
            store.load_dependency_graph(&r).unwrap().canonical_form(),
            g.canonical_form()
        );
        let m = store.resolve(&r.clone().pinned(), 5).unwrap();
        assert_eq!(m.dependency_graph, Some(g.clone()));
        assert!(matches!(
            store.save_dependency_graph(&VersionRef::latest("abc12"), &g),
            Err(StoreError::PinOnLatest(_))
        ));
        assert!(matches!(
            store.resolve(&VersionRef::latest("abc12").pinned(), 5),
            Err(StoreError::PinOnLatest(_))
        ));
    }

    #[test]
    fn tampered_cache_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        let r = store.publish_package(files("x"), Some("abc12"), true).unwrap();
        let path = dir.path().join("abc12").join(r.vid().unwrap()).join("files/main.ml");
        fs::write(path, "tampered").unwrap();
        assert!(matches!(store.resolve(&r, 0), Err(StoreError::Corrupt { .. })));
    }
}
