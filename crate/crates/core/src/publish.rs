//! Deployment backends.
//!
//! Every backend embeds the serialized service together with the files of
//! each package it references, so a published artifact can be served with
//! the package store gone. Packages are addressed by explicit version; a
//! service still depending on `latest` cannot be published.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::runtime::{execute, ExecError, PrimitiveRegistry};
use crate::service::{Service, TypedValue};
use crate::store::{Files, PackageRepo, StoreError, CONFIG_FILE};
use crate::typecheck::parse_config;

pub const BUNDLE_FORMAT: &str = "zoosvc/1";
pub const SCRIPT_SUFFIX: &str = ".bundle.zoosvc";
pub const UNIKERNEL_SUFFIX: &str = ".mirage-config";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Container,
    Script,
    Unikernel,
}

impl BackendKind {
    pub const ALL: [BackendKind; 3] = [BackendKind::Container, BackendKind::Script, BackendKind::Unikernel];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Container => "container",
            BackendKind::Script => "script",
            BackendKind::Unikernel => "unikernel",
        }
    }

    /// Upper-case keyword used in programs.
    pub fn keyword(self) -> &'static str {
        match self {
            BackendKind::Container => "CONTAINER",
            BackendKind::Script => "SCRIPT",
            BackendKind::Unikernel => "UNIKERNEL",
        }
    }

    pub fn from_keyword(kw: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword() == kw)
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = PublishError;

    fn from_str(s: &str) -> Result<Self, PublishError> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PublishError::UnknownBackend(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub target: String,
}

impl BackendSpec {
    pub fn new(kind: BackendKind, target: impl Into<String>) -> Result<Self, PublishError> {
        let target = target.into();
        if target.trim().is_empty() || target.chars().any(char::is_control) {
            return Err(PublishError::InvalidTarget(target));
        }
        Ok(Self { kind, target })
    }
}

#[derive(Debug, Error)]
pub enum PublishError {
    #[error("service depends on unpinned package version {0}; publish requires explicit versions")]
    UnpinnedDependency(String),
    #[error("cannot write {path}: {detail}")]
    StoreWrite { path: PathBuf, detail: String },
    #[error("unknown backend `{0}` (expected container, script or unikernel)")]
    UnknownBackend(String),
    #[error("invalid backend target `{0}`")]
    InvalidTarget(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid bundle {path}: {detail}")]
    InvalidBundle { path: PathBuf, detail: String },
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> PublishError + '_ {
    move |e| PublishError::StoreWrite {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn bundle_err(path: &Path, detail: impl ToString) -> PublishError {
    PublishError::InvalidBundle {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

mod b64_files {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(pkgs: &BTreeMap<String, Files>, s: S) -> Result<S::Ok, S::Error> {
        let enc: BTreeMap<&str, BTreeMap<&str, String>> = pkgs
            .iter()
            .map(|(r, files)| {
                (
                    r.as_str(),
                    files.iter().map(|(n, b)| (n.as_str(), B64.encode(b))).collect(),
                )
            })
            .collect();
        enc.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Files>, D::Error> {
        let enc = BTreeMap::<String, BTreeMap<String, String>>::deserialize(d)?;
        enc.into_iter()
            .map(|(r, files)| {
                let files = files
                    .into_iter()
                    .map(|(n, b)| B64.decode(b).map(|b| (n, b)).map_err(serde::de::Error::custom))
                    .collect::<Result<Files, _>>()?;
                Ok((r, files))
            })
            .collect()
    }
}

/// A service plus the package files it needs, keyed by explicit ref.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format: String,
    pub service: Service,
    #[serde(with = "b64_files")]
    pub packages: BTreeMap<String, Files>,
}

impl Bundle {
    /// Checks that every function the graph calls is executable here with
    /// the signature its package declares.
    pub fn verify(&self, reg: &PrimitiveRegistry) -> Result<(), ExecError> {
        for node in self.service.graph().nodes() {
            let files = self
                .packages
                .get(&node.package_id)
                .ok_or_else(|| ExecError::MissingPrimitive {
                    package: node.package_id.clone(),
                    name: node.function_name.clone(),
                })?;
            let declared = files
                .get(CONFIG_FILE)
                .and_then(|c| parse_config(c).ok())
                .and_then(|mut c| c.remove(&node.function_name))
                .ok_or_else(|| ExecError::MissingPrimitive {
                    package: node.package_id.clone(),
                    name: node.function_name.clone(),
                })?;
            let one = BTreeMap::from([(node.function_name.clone(), declared)]);
            reg.matches_config(&node.package_id, &one)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub kind: BackendKind,
    pub uri: String,
    pub output_path: PathBuf,
    pub manifest: Bundle,
}

impl Artifact {
    /// Bytes on disk; a directory counts the sum of its files.
    pub fn size(&self) -> std::io::Result<u64> {
        path_size(&self.output_path)
    }
}

fn path_size(p: &Path) -> std::io::Result<u64> {
    let meta = std::fs::metadata(p)?;
    if meta.is_file() {
        return Ok(meta.len());
    }
    let mut total = 0;
    for entry in std::fs::read_dir(p)? {
        total += path_size(&entry?.path())?;
    }
    Ok(total)
}

/// Writes artifacts under `out_dir`, reading package files from `repo`.
pub struct Publisher<'a> {
    repo: &'a dyn PackageRepo,
    out_dir: PathBuf,
}

impl<'a> Publisher<'a> {
    pub fn new(repo: &'a dyn PackageRepo, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            repo,
            out_dir: out_dir.into(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Collects the service's packages. Pinned refs also persist the
    /// service graph beside the package the first time they are published.
    pub fn bundle(&self, s: &Service) -> Result<Bundle, PublishError> {
        let mut packages = BTreeMap::new();
        for r in s.packages() {
            if r.is_latest() {
                return Err(PublishError::UnpinnedDependency(r.to_string()));
            }
            let manifest = self.repo.fetch(r)?;
            if r.pin {
                match self.repo.load_dependency_graph(r) {
                    Ok(_) => {}
                    Err(StoreError::GraphMissing(_)) => self.repo.save_dependency_graph(r, s.graph())?,
                    Err(e) => return Err(e.into()),
                }
            }
            // nodes name packages by the textual ref, pin flag included
            packages.insert(r.to_string(), manifest.files);
        }
        Ok(Bundle {
            format: BUNDLE_FORMAT.into(),
            service: s.clone(),
            packages,
        })
    }

    pub fn publish(&self, s: &Service, spec: &BackendSpec) -> Result<Artifact, PublishError> {
        let bundle = self.bundle(s)?;
        let (uri, output_path) = match spec.kind {
            BackendKind::Container => {
                let dir = self.container_dir(&spec.target);
                write_container(&dir, &bundle)?;
                (format!("container://{}", spec.target), dir)
            }
            BackendKind::Script => {
                let path = self.target_path(&spec.target, SCRIPT_SUFFIX)?;
                write_file(&path, &encode_script(&bundle))?;
                (file_uri(&path), path)
            }
            BackendKind::Unikernel => {
                let path = self.target_path(&spec.target, UNIKERNEL_SUFFIX)?;
                let desc = serde_json::to_vec_pretty(&unikernel_descriptor(&bundle)).expect("descriptor serializes");
                write_file(&path, &desc)?;
                (file_uri(&path), path)
            }
        };
        Ok(Artifact {
            kind: spec.kind,
            uri,
            output_path,
            manifest: bundle,
        })
    }

    /// Where a container bundle for `target` is written.
    pub fn container_dir(&self, target: &str) -> PathBuf {
        self.out_dir.join("containers").join(sanitize(target))
    }

    fn target_path(&self, target: &str, suffix: &str) -> Result<PathBuf, PublishError> {
        if target.ends_with('/') || target.split('/').any(|c| c == "..") {
            return Err(PublishError::InvalidTarget(target.to_string()));
        }
        let base = Path::new(target);
        let base = if base.is_absolute() {
            base.to_path_buf()
        } else {
            self.out_dir.join(base)
        };
        let mut name = base.into_os_string();
        name.push(suffix);
        Ok(PathBuf::from(name))
    }
}

fn sanitize(target: &str) -> String {
    target
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn file_uri(p: &Path) -> String {
    let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    format!("file://{}", abs.display())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PublishError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(write_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(write_err(path))
}

const SERVICE_FILE: &str = "service.json";
const SERVE_FILE: &str = "serve.json";
const BUILD_FILE: &str = "Dockerfile";
const PACKAGES_DIR: &str = "packages";

fn dockerfile(port: u16) -> String {
    format!(
        "FROM debian:bookworm-slim\n\
         COPY zooc /usr/local/bin/zooc\n\
         COPY . /srv/zoo\n\
         WORKDIR /srv/zoo\n\
         EXPOSE {port}\n\
         ENTRYPOINT [\"zooc\", \"serve-bundle\", \"/srv/zoo\", \"--port\", \"{port}\"]\n"
    )
}

fn write_container(dir: &Path, bundle: &Bundle) -> Result<(), PublishError> {
    if dir.join(SERVICE_FILE).is_file() {
        std::fs::remove_dir_all(dir).map_err(write_err(dir))?;
    } else if dir.exists() {
        return Err(PublishError::StoreWrite {
            path: dir.to_path_buf(),
            detail: "exists and is not a container bundle".into(),
        });
    }
    let service = serde_json::to_vec_pretty(&bundle.service).expect("service serializes");
    write_file(&dir.join(SERVICE_FILE), &service)?;
    // package dirs mirror the store layout: <gid>/<vid>[/pin]/<file>
    for (r, files) in &bundle.packages {
        let pdir = r.split('/').fold(dir.join(PACKAGES_DIR), |p, c| p.join(c));
        for (name, bytes) in files {
            write_file(&pdir.join(name), bytes)?;
        }
    }
    let serve = json!({
        "format": BUNDLE_FORMAT,
        "port": DEFAULT_PORT,
        "service": bundle.service.name(),
        "signature": bundle.service.type_string(),
        "packages": bundle.packages.keys().collect::<Vec<_>>(),
    });
    write_file(
        &dir.join(SERVE_FILE),
        &serde_json::to_vec_pretty(&serve).expect("config serializes"),
    )?;
    write_file(&dir.join(BUILD_FILE), dockerfile(DEFAULT_PORT).as_bytes())
}

/// Reads a container bundle directory back.
pub fn load_container(dir: &Path) -> Result<Bundle, PublishError> {
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| bundle_err(&p, e));
    let service: Service = serde_json::from_slice(&read(dir.join(SERVICE_FILE))?).map_err(|e| bundle_err(dir, e))?;
    let serve: Value = serde_json::from_slice(&read(dir.join(SERVE_FILE))?).map_err(|e| bundle_err(dir, e))?;
    let refs = serve["packages"]
        .as_array()
        .ok_or_else(|| bundle_err(dir, "serve.json lists no packages"))?;
    let mut packages = BTreeMap::new();
    for r in refs {
        let r = r
            .as_str()
            .ok_or_else(|| bundle_err(dir, "package refs must be strings"))?;
        let pdir = r.split('/').fold(dir.join(PACKAGES_DIR), |p, c| p.join(c));
        let mut files = Files::new();
        for entry in std::fs::read_dir(&pdir).map_err(|e| bundle_err(&pdir, e))? {
            let entry = entry.map_err(|e| bundle_err(&pdir, e))?;
            if entry.path().is_file() {
                files.insert(entry.file_name().to_string_lossy().into_owned(), read(entry.path())?);
            }
        }
        packages.insert(r.to_string(), files);
    }
    Ok(Bundle {
        format: BUNDLE_FORMAT.into(),
        service,
        packages,
    })
}

pub fn encode_script(bundle: &Bundle) -> Vec<u8> {
    let mut gz = GzEncoder::new(Vec::new(), Compression::best());
    serde_json::to_writer(&mut gz, bundle).expect("bundle serializes");
    gz.flush().expect("in-memory write");
    gz.finish().expect("in-memory write")
}

pub fn decode_script(bytes: &[u8]) -> Result<Bundle, String> {
    let mut json = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut json)
        .map_err(|e| e.to_string())?;
    let bundle: Bundle = serde_json::from_slice(&json).map_err(|e| e.to_string())?;
    if bundle.format != BUNDLE_FORMAT {
        return Err(format!("unsupported bundle format `{}`", bundle.format));
    }
    Ok(bundle)
}

/// Loads a script bundle file or a container bundle directory.
pub fn load_bundle(path: &Path) -> Result<Bundle, PublishError> {
    if path.is_dir() {
        return load_container(path);
    }
    let bytes = std::fs::read(path).map_err(|e| bundle_err(path, e))?;
    decode_script(&bytes).map_err(|e| bundle_err(path, e))
}

fn unikernel_descriptor(bundle: &Bundle) -> Value {
    let s = &bundle.service;
    let modules: Vec<Value> = s
        .graph()
        .topo_order()
        .into_iter()
        .map(|id| {
            let n = &s.graph().nodes()[id];
            json!({ "package": n.package_id, "function": n.function_name, "arity": n.arity })
        })
        .collect();
    json!({
        "format": BUNDLE_FORMAT,
        "entry": s.name(),
        "signature": s.type_string(),
        "modules": modules,
        "packages": bundle.packages.keys().collect::<Vec<_>>(),
        "network": {
            "ipv4": "10.0.0.2/24",
            "gateway": "10.0.0.1",
            "port": DEFAULT_PORT,
        },
        "service": s,
    })
}

/// Checks a unikernel descriptor: known fields, a parseable service, and a
/// module list matching the service graph.
pub fn check_unikernel_descriptor(bytes: &[u8]) -> Result<Service, String> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let s: Service = serde_json::from_value(v["service"].clone()).map_err(|e| e.to_string())?;
    if v["entry"] != s.name() || v["signature"] != s.type_string().as_str() {
        return Err("entry or signature disagrees with the embedded service".into());
    }
    let modules = v["modules"].as_array().ok_or("missing module list")?;
    if modules.len() != s.graph().nodes().len() {
        return Err("module list does not cover the service graph".into());
    }
    if !v["network"]["port"].is_u64() {
        return Err("missing network port".into());
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeRow {
    pub backend: BackendKind,
    pub bytes: u64,
}

pub fn artifact_size_report(artifacts: &[Artifact]) -> std::io::Result<Vec<SizeRow>> {
    artifacts
        .iter()
        .map(|a| {
            Ok(SizeRow {
                backend: a.kind,
                bytes: a.size()?,
            })
        })
        .collect()
}

pub fn size_report_csv(rows: &[SizeRow]) -> String {
    let mut out = String::from("backend,bytes\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.backend, r.bytes));
    }
    out
}

/// The `/invoke` contract: request body `{"inputs": [...]}`, reply
/// `{"output": ...}`. Returns the HTTP status alongside the JSON body.
pub fn invoke_json(s: &Service, reg: &PrimitiveRegistry, body: &[u8]) -> (u16, Value) {
    let req: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return (422, json!({ "error": format!("malformed JSON: {e}") })),
    };
    let Some(raw) = req.get("inputs").and_then(Value::as_array) else {
        return (422, json!({ "error": "body must be an object with an `inputs` array" }));
    };
    let mut inputs = Vec::with_capacity(raw.len());
    for (position, v) in raw.iter().enumerate() {
        match TypedValue::from_wire(v) {
            Ok(tv) => inputs.push(tv),
            Err(e) => return (422, json!({ "error": e.to_string(), "position": position })),
        }
    }
    let e = match execute(s, &inputs, reg) {
        Ok(out) => return (200, json!({ "output": out.to_wire() })),
        Err(e) => e,
    };
    let error = e.to_string();
    match e {
        ExecError::InputTypeMismatch {
            position,
            expected,
            found,
        } => (
            400,
            json!({
                "error": error,
                "position": position,
                "expected": expected.to_string(),
                "found": found.to_string(),
            }),
        ),
        ExecError::InputCountMismatch { expected, found } => (
            400,
            json!({ "error": error, "expected_count": expected, "found_count": found }),
        ),
        _ => (500, json!({ "error": error })),
    }
}

#[cfg(feature = "http")]
pub use server::{serve, InvokeError, ServiceClient};

#[cfg(feature = "http")]
mod server {
    use std::sync::Arc;

    use super::*;
    use crate::http::{self, HttpResponse, ServerHandle};

    /// Serves `GET /signature` and `POST /invoke` for one service.
    pub fn serve(s: Service, reg: PrimitiveRegistry, addr: &str) -> std::io::Result<ServerHandle> {
        let state = Arc::new((s, reg));
        http::serve(addr, move |req| {
            let (s, reg) = &*state;
            match (req.method.as_str(), req.path.as_str()) {
                ("GET", "/signature") => HttpResponse::json(200, &Value::String(s.type_string())),
                ("POST", "/invoke") => {
                    let (status, body) = invoke_json(s, reg, &req.body);
                    HttpResponse::json(status, &body)
                }
                (_, "/signature" | "/invoke") => HttpResponse::error(405, "method not allowed"),
                _ => HttpResponse::not_found(),
            }
        })
    }

    #[derive(Debug, Error)]
    pub enum InvokeError {
        #[error("request failed: {0}")]
        Transport(String),
        #[error("HTTP {status}: {body}")]
        Status { status: u16, body: Value },
    }

    /// Client for a served service.
    pub struct ServiceClient {
        base: String,
        agent: ureq::Agent,
    }

    impl ServiceClient {
        pub fn new(base_url: &str) -> Self {
            Self {
                base: base_url.trim_end_matches('/').to_string(),
                agent: http::agent(),
            }
        }

        fn read(mut resp: ureq::http::Response<ureq::Body>) -> Result<Value, InvokeError> {
            let status = resp.status().as_u16();
            let body: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| InvokeError::Transport(e.to_string()))?;
            if status == 200 {
                Ok(body)
            } else {
                Err(InvokeError::Status { status, body })
            }
        }

        pub fn signature(&self) -> Result<String, InvokeError> {
            let resp = self
                .agent
                .get(&format!("{}/signature", self.base))
                .call()
                .map_err(|e| InvokeError::Transport(e.to_string()))?;
            match Self::read(resp)? {
                Value::String(s) => Ok(s),
                other => Err(InvokeError::Transport(format!("unexpected signature body {other}"))),
            }
        }

        /// Status and body bytes exactly as sent by the server.
        pub fn invoke_body(&self, inputs: &[TypedValue]) -> Result<(u16, Vec<u8>), InvokeError> {
            let body = json!({ "inputs": inputs.iter().map(TypedValue::to_wire).collect::<Vec<_>>() });
            let mut resp = self
                .agent
                .post(&format!("{}/invoke", self.base))
                .send_json(&body)
                .map_err(|e| InvokeError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let bytes = resp
                .body_mut()
                .read_to_vec()
                .map_err(|e| InvokeError::Transport(e.to_string()))?;
            Ok((status, bytes))
        }

        /// The `output` field of a successful invocation.
        pub fn invoke_raw(&self, inputs: &[TypedValue]) -> Result<Value, InvokeError> {
            let body = json!({ "inputs": inputs.iter().map(TypedValue::to_wire).collect::<Vec<_>>() });
            let resp = self
                .agent
                .post(&format!("{}/invoke", self.base))
                .send_json(&body)
                .map_err(|e| InvokeError::Transport(e.to_string()))?;
            Ok(Self::read(resp)?["output"].take())
        }

        pub fn invoke(&self, inputs: &[TypedValue]) -> Result<TypedValue, InvokeError> {
            let out = self.invoke_raw(inputs)?;
            TypedValue::from_wire(&out).map_err(|e| InvokeError::Transport(e.to_string()))
        }
    }
}
