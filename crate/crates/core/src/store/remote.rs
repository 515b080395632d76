//! Remote package sources consulted on cache misses and stale `latest`.

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use super::{valid_gid, valid_vid, Files};

/// The remote could not be reached or answered nonsense. A package that
/// simply does not exist is `Ok(None)`, not an error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct RemoteError(pub String);

pub trait Remote: Send + Sync {
    /// Newest version id the remote knows for `gid`.
    fn latest(&self, gid: &str) -> Result<Option<String>, RemoteError>;

    fn fetch(&self, gid: &str, vid: &str) -> Result<Option<Files>, RemoteError>;
}

/// A directory tree laid out as `<gid>/<vid>/<files>` with the newest
/// version id in `<gid>/latest`.
pub struct DirRemote {
    root: PathBuf,
}

impl DirRemote {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn check_root(&self) -> Result<(), RemoteError> {
        if self.root.is_dir() {
            Ok(())
        } else {
            Err(RemoteError(format!("{} is not reachable", self.root.display())))
        }
    }
}

impl Remote for DirRemote {
    fn latest(&self, gid: &str) -> Result<Option<String>, RemoteError> {
        self.check_root()?;
        if !valid_gid(gid) {
            return Ok(None);
        }
        match fs::read_to_string(self.root.join(gid).join("latest")) {
            Ok(s) => Ok(Some(s.trim().to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RemoteError(e.to_string())),
        }
    }

    fn fetch(&self, gid: &str, vid: &str) -> Result<Option<Files>, RemoteError> {
        self.check_root()?;
        if !valid_gid(gid) || !valid_vid(vid) {
            return Ok(None);
        }
        let dir = self.root.join(gid).join(vid);
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut files = Files::new();
        for entry in fs::read_dir(&dir).map_err(|e| RemoteError(e.to_string()))? {
            let entry = entry.map_err(|e| RemoteError(e.to_string()))?;
            if !entry.path().is_file() {
                continue;
            }
            let name = entry
                .file_name()
                .into_string()
                .map_err(|_| RemoteError("non UTF-8 file name".into()))?;
            files.insert(name, fs::read(entry.path()).map_err(|e| RemoteError(e.to_string()))?);
        }
        Ok(Some(files))
    }
}

#[cfg(feature = "http")]
mod http_remote {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use base64::engine::general_purpose::STANDARD as BASE64;
    use base64::Engine;
    use serde::{Deserialize, Serialize};
    use serde_json::json;

    use super::{Files, Remote, RemoteError};
    use crate::http::{self, HttpRequest, HttpResponse, ServerHandle};
    use crate::store::{PackageStore, VersionRef};

    /// Archive body for `GET /pkg/<gid>/<vid>`.
    #[derive(Serialize, Deserialize)]
    struct Archive {
        gid: String,
        vid: String,
        files: BTreeMap<String, String>,
    }

    /// Speaks `GET /pkg/<gid>/latest` → `{"vid": ...}` and
    /// `GET /pkg/<gid>/<vid>` → archive.
    pub struct HttpRemote {
        base: String,
        agent: ureq::Agent,
    }

    impl HttpRemote {
        pub fn new(base_url: &str) -> Self {
            Self {
                base: base_url.trim_end_matches('/').to_string(),
                agent: http::agent(),
            }
        }

        fn get(&self, path: &str) -> Result<Option<serde_json::Value>, RemoteError> {
            let mut resp = self
                .agent
                .get(&format!("{}{path}", self.base))
                .call()
                .map_err(|e| RemoteError(e.to_string()))?;
            match resp.status().as_u16() {
                200 => resp
                    .body_mut()
                    .read_json()
                    .map(Some)
                    .map_err(|e| RemoteError(e.to_string())),
                404 => Ok(None),
                s => Err(RemoteError(format!("remote answered HTTP {s}"))),
            }
        }
    }

    impl Remote for HttpRemote {
        fn latest(&self, gid: &str) -> Result<Option<String>, RemoteError> {
            let Some(v) = self.get(&format!("/pkg/{gid}/latest"))? else {
                return Ok(None);
            };
            v.get("vid")
                .and_then(|v| v.as_str())
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| RemoteError("latest response lacks `vid`".into()))
        }

        fn fetch(&self, gid: &str, vid: &str) -> Result<Option<Files>, RemoteError> {
            let Some(v) = self.get(&format!("/pkg/{gid}/{vid}"))? else {
                return Ok(None);
            };
            let archive: Archive = serde_json::from_value(v).map_err(|e| RemoteError(e.to_string()))?;
            archive
                .files
                .into_iter()
                .map(|(name, b64)| {
                    BASE64
                        .decode(b64)
                        .map(|bytes| (name, bytes))
                        .map_err(|e| RemoteError(e.to_string()))
                })
                .collect::<Result<Files, _>>()
                .map(Some)
        }
    }

    /// Serves the packages of a local store over the remote protocol.
    pub fn serve_packages(store: Arc<PackageStore>, addr: &str) -> std::io::Result<ServerHandle> {
        http::serve(addr, move |req: HttpRequest| {
            if req.method != "GET" {
                return HttpResponse::error(405, "method not allowed");
            }
            match req.segments().as_slice() {
                ["pkg", gid, "latest"] => match store.meta(gid) {
                    Ok(Some(meta)) => HttpResponse::json(200, &json!({ "vid": meta.latest_vid })),
                    Ok(None) => HttpResponse::not_found(),
                    Err(e) => HttpResponse::error(500, e.to_string()),
                },
                ["pkg", gid, vid] => {
                    let Ok(r) = format!("{gid}/{vid}").parse::<VersionRef>() else {
                        return HttpResponse::not_found();
                    };
                    match store.resolve(&r, crate::store::disk::unix_now()) {
                        Ok(m) => {
                            let archive = Archive {
                                gid: m.gid,
                                vid: m.vid,
                                files: m.files.iter().map(|(k, v)| (k.clone(), BASE64.encode(v))).collect(),
                            };
                            HttpResponse::json(200, &serde_json::to_value(archive).expect("archive serializes"))
                        }
                        Err(crate::store::StoreError::PackageNotFound(_)) => HttpResponse::not_found(),
                        Err(e) => HttpResponse::error(500, e.to_string()),
                    }
                }
                _ => HttpResponse::not_found(),
            }
        })
    }
}

#[cfg(feature = "http")]
pub use http_remote::{serve_packages, HttpRemote};
