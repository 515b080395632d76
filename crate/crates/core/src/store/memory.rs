use std::collections::BTreeMap;
use std::sync::RwLock;

use super::{
    check_files, content_hash, make_gid, make_vid, require_explicit, valid_gid, Files, PackageManifest, PackageRepo,
    StoreError, Version, VersionRef,
};
use crate::service::DependencyGraph;

/// In-memory repository without caching or remote semantics: `latest` is
/// simply the most recent publish. Used by the browser demo and in tests.
#[derive(Default)]
pub struct MemoryStore {
    packages: RwLock<BTreeMap<String, Vec<(String, Files)>>>,
    graphs: RwLock<BTreeMap<(String, String), DependencyGraph>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a version under a caller-chosen vid.
    pub fn insert(&self, gid: &str, vid: &str, files: Files) -> VersionRef {
        self.packages
            .write()
            .expect("memory store poisoned")
            .entry(gid.to_string())
            .or_default()
            .push((vid.to_string(), files));
        VersionRef::explicit(gid, vid)
    }
}

impl PackageRepo for MemoryStore {
    fn fetch(&self, r: &VersionRef) -> Result<PackageManifest, StoreError> {
        if r.pin && r.is_latest() {
            return Err(StoreError::PinOnLatest(r.to_string()));
        }
        let packages = self.packages.read().expect("memory store poisoned");
        let versions = packages
            .get(&r.gid)
            .ok_or_else(|| StoreError::PackageNotFound(r.to_string()))?;
        let (vid, files) = match &r.version {
            Version::Latest => versions.last(),
            Version::Explicit(v) => versions.iter().find(|(vid, _)| vid == v),
        }
        .ok_or_else(|| StoreError::PackageNotFound(r.to_string()))?;
        let dependency_graph = if r.pin {
            self.graphs
                .read()
                .expect("memory store poisoned")
                .get(&(r.gid.clone(), vid.clone()))
                .cloned()
        } else {
            None
        };
        Ok(PackageManifest {
            gid: r.gid.clone(),
            vid: vid.clone(),
            files: files.clone(),
            fetched_at: 0,
            dependency_graph,
        })
    }

    fn publish_package(
        &self,
        files: Files,
        gid: Option<&str>,
        service_package: bool,
    ) -> Result<VersionRef, StoreError> {
        check_files(&files, service_package)?;
        let hash = content_hash(&files);
        let gid = match gid {
            Some(g) if valid_gid(g) => g.to_string(),
            Some(g) => return Err(StoreError::InvalidRef(g.to_string())),
            None => make_gid(&hash),
        };
        let counter = self
            .packages
            .read()
            .expect("memory store poisoned")
            .get(&gid)
            .map_or(0, Vec::len) as u64
            + 1;
        Ok(self.insert(&gid, &make_vid(&hash, counter), files))
    }

    fn save_dependency_graph(&self, r: &VersionRef, graph: &DependencyGraph) -> Result<(), StoreError> {
        let vid = require_explicit(r)?;
        self.fetch(&VersionRef::explicit(&r.gid, vid))?;
        self.graphs
            .write()
            .expect("memory store poisoned")
            .insert((r.gid.clone(), vid.to_string()), graph.clone());
        Ok(())
    }

    fn load_dependency_graph(&self, r: &VersionRef) -> Result<DependencyGraph, StoreError> {
        let vid = require_explicit(r)?;
        self.graphs
            .read()
            .expect("memory store poisoned")
            .get(&(r.gid.clone(), vid.to_string()))
            .cloned()
            .ok_or_else(|| StoreError::GraphMissing(r.to_string()))
    }
}
