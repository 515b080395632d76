//! The public record of published services, searchable by type.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::service::{DataType, ServiceSignature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub gist_id: String,
    pub description: String,
    pub type_string: String,
    pub uri: String,
    pub published_at: u64,
}

impl DiscoveryRecord {
    pub fn new(gist_id: &str, description: &str, type_string: &str, uri: &str, published_at: u64) -> Self {
        Self {
            gist_id: gist_id.into(),
            description: description.into(),
            type_string: type_string.into(),
            uri: uri.into(),
            published_at,
        }
    }

    pub fn signature(&self) -> Option<ServiceSignature> {
        self.type_string.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub id: u64,
    #[serde(flatten)]
    pub record: DiscoveryRecord,
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("invalid type string `{0}`")]
    InvalidTypeString(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("registry storage error: {0}")]
    Storage(String),
    #[error("registry request failed: {0}")]
    Remote(String),
}

/// Search predicates; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub input: Option<DataType>,
    pub output: Option<DataType>,
    pub text: Option<String>,
}

impl Query {
    pub fn matches(&self, r: &DiscoveryRecord) -> bool {
        let Some(sig) = r.signature() else {
            return false;
        };
        self.input.as_ref().is_none_or(|t| sig.inputs.contains(t))
            && self.output.as_ref().is_none_or(|t| sig.output == *t)
            && self.text.as_deref().is_none_or(|q| r.description.contains(q))
    }
}

/// Where records live. Appends are serialized by the registry.
pub trait RecordStorage: Send + Sync {
    fn load(&self) -> Result<Vec<StoredRecord>, DiscoveryError>;
    fn append(&self, rec: &StoredRecord) -> Result<(), DiscoveryError>;
    /// Replaces the stored contents with exactly `recs`.
    fn compact(&self, recs: &[StoredRecord]) -> Result<(), DiscoveryError>;
}

#[derive(Default)]
pub struct MemoryLog(Mutex<Vec<StoredRecord>>);

impl RecordStorage for MemoryLog {
    fn load(&self) -> Result<Vec<StoredRecord>, DiscoveryError> {
        Ok(self.0.lock().expect("log lock").clone())
    }

    fn append(&self, rec: &StoredRecord) -> Result<(), DiscoveryError> {
        self.0.lock().expect("log lock").push(rec.clone());
        Ok(())
    }

    fn compact(&self, recs: &[StoredRecord]) -> Result<(), DiscoveryError> {
        *self.0.lock().expect("log lock") = recs.to_vec();
        Ok(())
    }
}

/// One JSON record per line.
pub struct FileLog {
    path: PathBuf,
}

impl FileLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn storage_err(e: impl ToString) -> DiscoveryError {
    DiscoveryError::Storage(e.to_string())
}

impl RecordStorage for FileLog {
    fn load(&self) -> Result<Vec<StoredRecord>, DiscoveryError> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(storage_err(e)),
        };
        // a torn final line from an interrupted append is dropped
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }

    fn append(&self, rec: &StoredRecord) -> Result<(), DiscoveryError> {
        let mut line = serde_json::to_vec(rec).expect("records serialize");
        line.push(b'\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(&line).and_then(|_| f.sync_data()))
            .map_err(storage_err)
    }

    fn compact(&self, recs: &[StoredRecord]) -> Result<(), DiscoveryError> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(storage_err)?;
        }
        let mut body = Vec::new();
        for r in recs {
            body.extend(serde_json::to_vec(r).expect("records serialize"));
            body.push(b'\n');
        }
        let tmp = self.path.with_extension("compact");
        std::fs::write(&tmp, body).map_err(storage_err)?;
        std::fs::rename(&tmp, &self.path).map_err(storage_err)
    }
}

pub struct Registry {
    storage: Box<dyn RecordStorage>,
    records: RwLock<Vec<StoredRecord>>,
    writer: Mutex<()>,
}

impl Registry {
    /// Loads the log, dropping duplicate ids and duplicate (gist, uri)
    /// pairs, and rewrites it compacted.
    pub fn open(storage: Box<dyn RecordStorage>) -> Result<Self, DiscoveryError> {
        let mut records: Vec<StoredRecord> = Vec::new();
        for r in storage.load()? {
            let dup = records
                .iter()
                .any(|k| k.id == r.id || (k.record.gist_id == r.record.gist_id && k.record.uri == r.record.uri));
            if !dup {
                records.push(r);
            }
        }
        storage.compact(&records)?;
        Ok(Self {
            storage,
            records: RwLock::new(records),
            writer: Mutex::new(()),
        })
    }

    pub fn in_memory() -> Self {
        Self::open(Box::<MemoryLog>::default()).expect("memory storage cannot fail")
    }

    pub fn file(path: impl Into<PathBuf>) -> Result<Self, DiscoveryError> {
        Self::open(Box::new(FileLog::new(path)))
    }

    /// Adds a record and returns its id; re-registering the same
    /// (gist id, uri) returns the existing id.
    pub fn register(&self, mut rec: DiscoveryRecord) -> Result<u64, DiscoveryError> {
        let sig: ServiceSignature = rec
            .type_string
            .parse()
            .map_err(|_| DiscoveryError::InvalidTypeString(rec.type_string.clone()))?;
        rec.type_string = sig.to_string();
        if rec.uri.trim().is_empty() {
            return Err(DiscoveryError::InvalidRecord("uri is empty".into()));
        }
        if rec.gist_id.trim().is_empty() {
            return Err(DiscoveryError::InvalidRecord("gist id is empty".into()));
        }
        if rec.description.contains(['\n', '\r']) {
            return Err(DiscoveryError::InvalidRecord("description must be one line".into()));
        }
        let _w = self.writer.lock().expect("writer lock");
        let existing = self
            .records
            .read()
            .expect("records lock")
            .iter()
            .find(|k| k.record.gist_id == rec.gist_id && k.record.uri == rec.uri)
            .map(|k| k.id);
        if let Some(id) = existing {
            return Ok(id);
        }
        let id = self
            .records
            .read()
            .expect("records lock")
            .iter()
            .map(|r| r.id)
            .max()
            .unwrap_or(0)
            + 1;
        let stored = StoredRecord { id, record: rec };
        self.storage.append(&stored)?;
        self.records.write().expect("records lock").push(stored);
        Ok(id)
    }

    /// Matching records, newest first.
    pub fn search(&self, q: &Query) -> Vec<StoredRecord> {
        let mut hits: Vec<StoredRecord> = self
            .records
            .read()
            .expect("records lock")
            .iter()
            .filter(|r| q.matches(&r.record))
            .cloned()
            .collect();
        hits.sort_by(|a, b| b.record.published_at.cmp(&a.record.published_at).then(b.id.cmp(&a.id)));
        hits
    }

    pub fn get(&self, id: u64) -> Option<StoredRecord> {
        self.records
            .read()
            .expect("records lock")
            .iter()
            .find(|r| r.id == id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("records lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(feature = "http")]
pub use net::{serve_registry, RegistryClient};

#[cfg(feature = "http")]
mod net {
    use std::sync::Arc;

    use serde_json::{json, Value};

    use super::*;
    use crate::http::{self, HttpRequest, HttpResponse, ServerHandle};

    fn parse_query(req: &HttpRequest) -> Result<Query, String> {
        let ty = |k: &str| -> Result<Option<DataType>, String> {
            req.query_param(k)
                .filter(|v| !v.is_empty())
                .map(|v| v.parse().map_err(|_| format!("unknown type `{v}` in `{k}`")))
                .transpose()
        };
        Ok(Query {
            input: ty("input")?,
            output: ty("output")?,
            text: req.query_param("q").filter(|v| !v.is_empty()).map(str::to_string),
        })
    }

    fn handle(reg: &Registry, req: HttpRequest) -> HttpResponse {
        match (req.method.as_str(), req.segments().as_slice()) {
            ("POST", ["records"]) => {
                let rec: DiscoveryRecord = match serde_json::from_slice(&req.body) {
                    Ok(r) => r,
                    Err(e) => return HttpResponse::error(422, e.to_string()),
                };
                match reg.register(rec) {
                    Ok(id) => HttpResponse::json(201, &json!({ "id": id })),
                    Err(e @ (DiscoveryError::InvalidTypeString(_) | DiscoveryError::InvalidRecord(_))) => {
                        HttpResponse::error(400, e.to_string())
                    }
                    Err(e) => HttpResponse::error(500, e.to_string()),
                }
            }
            ("GET", ["records"]) => match parse_query(&req) {
                Ok(q) => HttpResponse::json(200, &serde_json::to_value(reg.search(&q)).expect("records serialize")),
                Err(e) => HttpResponse::error(400, e),
            },
            ("GET", ["records", id]) => match id.parse().ok().and_then(|id| reg.get(id)) {
                Some(r) => HttpResponse::json(200, &serde_json::to_value(r).expect("records serialize")),
                None => HttpResponse::not_found(),
            },
            _ => HttpResponse::not_found(),
        }
    }

    pub fn serve_registry(reg: Arc<Registry>, addr: &str) -> std::io::Result<ServerHandle> {
        http::serve(addr, move |req| handle(&reg, req))
    }

    pub struct RegistryClient {
        base: String,
        agent: ureq::Agent,
    }

    fn remote(e: impl ToString) -> DiscoveryError {
        DiscoveryError::Remote(e.to_string())
    }

    impl RegistryClient {
        pub fn new(base_url: &str) -> Self {
            Self {
                base: base_url.trim_end_matches('/').to_string(),
                agent: http::agent(),
            }
        }

        fn read(mut resp: ureq::http::Response<ureq::Body>) -> Result<(u16, Value), DiscoveryError> {
            let status = resp.status().as_u16();
            let body: Value = resp.body_mut().read_json().map_err(remote)?;
            Ok((status, body))
        }

        fn error(status: u16, body: &Value) -> DiscoveryError {
            let msg = body["error"].as_str().unwrap_or("request failed").to_string();
            match status {
                400 if msg.starts_with("invalid type string") => DiscoveryError::InvalidTypeString(
                    msg.trim_start_matches("invalid type string ").trim_matches('`').into(),
                ),
                400 | 422 => DiscoveryError::InvalidRecord(msg),
                _ => DiscoveryError::Remote(format!("HTTP {status}: {msg}")),
            }
        }

        pub fn register(&self, rec: &DiscoveryRecord) -> Result<u64, DiscoveryError> {
            let resp = self
                .agent
                .post(&format!("{}/records", self.base))
                .send_json(rec)
                .map_err(remote)?;
            match Self::read(resp)? {
                (201, body) => body["id"].as_u64().ok_or_else(|| remote("response has no id")),
                (status, body) => Err(Self::error(status, &body)),
            }
        }

        pub fn search(&self, q: &Query) -> Result<Vec<StoredRecord>, DiscoveryError> {
            let mut req = self.agent.get(&format!("{}/records", self.base));
            if let Some(t) = &q.input {
                req = req.query("input", t.to_string());
            }
            if let Some(t) = &q.output {
                req = req.query("output", t.to_string());
            }
            if let Some(t) = &q.text {
                req = req.query("q", t);
            }
            match Self::read(req.call().map_err(remote)?)? {
                (200, body) => serde_json::from_value(body).map_err(remote),
                (status, body) => Err(Self::error(status, &body)),
            }
        }

        pub fn get(&self, id: u64) -> Result<Option<StoredRecord>, DiscoveryError> {
            match Self::read(
                self.agent
                    .get(&format!("{}/records/{id}", self.base))
                    .call()
                    .map_err(remote)?,
            )? {
                (200, body) => serde_json::from_value(body).map(Some).map_err(remote),
                (404, _) => Ok(None),
                (status, body) => Err(Self::error(status, &body)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(gist: &str, ty: &str, uri: &str, t: u64) -> DiscoveryRecord {
        DiscoveryRecord::new(gist, "image style pipeline", ty, uri, t)
    }

    #[test]
    fn register_is_idempotent_per_gist_and_uri() {
        let reg = Registry::in_memory();
        let a = reg
            .register(rec("g1", "png_img -> fr_text", "container://a", 1))
            .unwrap();
        let b = reg
            .register(rec("g1", "png_img -> fr_text", "container://a", 2))
            .unwrap();
        let c = reg
            .register(rec("g1", "png_img -> fr_text", "container://b", 3))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn rejects_bad_records() {
        let reg = Registry::in_memory();
        assert!(matches!(
            reg.register(rec("g", "png_img -> banana", "u", 0)),
            Err(DiscoveryError::InvalidTypeString(_))
        ));
        assert!(matches!(
            reg.register(rec("g", "int", " ", 0)),
            Err(DiscoveryError::InvalidRecord(_))
        ));
    }

    #[test]
    fn search_filters_and_orders() {
        let reg = Registry::in_memory();
        reg.register(rec("a", "png_img -> fr_text", "u1", 10)).unwrap();
        reg.register(rec("b", "en_text -> fr_text", "u2", 30)).unwrap();
        reg.register(DiscoveryRecord::new("c", "counter", "int -> int", "u3", 20))
            .unwrap();
        let out = Query {
            output: Some(DataType::fr_text()),
            ..Query::default()
        };
        let hits: Vec<String> = reg.search(&out).into_iter().map(|r| r.record.gist_id).collect();
        assert_eq!(hits, ["b", "a"]);
        assert_eq!(reg.search(&Query::default()).len(), 3);
        let voice = Query {
            input: Some(DataType::en_voice()),
            ..Query::default()
        };
        assert!(reg.search(&voice).is_empty());
        let text = Query {
            text: Some("count".into()),
            ..Query::default()
        };
        assert_eq!(reg.search(&text)[0].record.gist_id, "c");
    }

    #[test]
    fn file_log_persists_and_compacts() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("records.log");
        {
            let reg = Registry::file(&path).unwrap();
            reg.register(rec("a", "int", "u1", 1)).unwrap();
            reg.register(rec("b", "int", "u2", 2)).unwrap();
        }
        // simulate a duplicate and a torn append
        let first = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{first}").unwrap();
        write!(f, "{{\"id\": 9, \"gist").unwrap();
        drop(f);
        let reg = Registry::file(&path).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(reg.get(2).unwrap().record.gist_id, "b");
        assert_eq!(reg.register(rec("c", "int", "u3", 3)).unwrap(), 3);
    }

    fn arb_sig() -> impl Strategy<Value = String> {
        let t = prop::sample::select(vec!["int", "float", "png_img", "en_text", "fr_text", "ndarray"]);
        prop::collection::vec(t, 1..4).prop_map(|ts| ts.join(" -> "))
    }

    proptest! {
        #[test]
        fn search_results_satisfy_predicates(
            recs in prop::collection::vec((arb_sig(), "[a-c]{1,3}", 0u64..100), 0..20),
            input in prop::option::of(prop::sample::select(vec!["int", "png_img", "en_text"])),
            output in prop::option::of(prop::sample::select(vec!["float", "fr_text", "ndarray"])),
            text in prop::option::of("[a-c]{1,2}"),
        ) {
            let reg = Registry::in_memory();
            for (i, (sig, desc, t)) in recs.iter().enumerate() {
                reg.register(DiscoveryRecord::new(&format!("g{i}"), desc, sig, &format!("u{i}"), *t)).unwrap();
            }
            let q = Query {
                input: input.map(|t| t.parse().unwrap()),
                output: output.map(|t| t.parse().unwrap()),
                text,
            };
            let hits = reg.search(&q);
            for h in &hits {
                let sig = h.record.signature().unwrap();
                prop_assert!(q.input.as_ref().is_none_or(|t| sig.inputs.contains(t)));
                prop_assert!(q.output.as_ref().is_none_or(|t| sig.output == *t));
                prop_assert!(q.text.as_deref().is_none_or(|s| h.record.description.contains(s)));
            }
            prop_assert!(hits.windows(2).all(|w| w[0].record.published_at >= w[1].record.published_at));
            // brute-force count
            let expected = recs.iter().filter(|(sig, desc, _)| {
                let s: ServiceSignature = sig.parse().unwrap();
                q.input.as_ref().is_none_or(|t| s.inputs.contains(t))
                    && q.output.as_ref().is_none_or(|t| s.output == *t)
                    && q.text.as_deref().is_none_or(|x| desc.contains(x))
            }).count();
            prop_assert_eq!(hits.len(), expected);
        }
    }
}
