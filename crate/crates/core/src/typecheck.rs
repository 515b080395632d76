//! Service creation from package configs and type-checked composition.
//!
//! Composing `[f1, ..., fn]` into `g` requires `n` to equal the arity of
//! `g` and the output type of each `fi` to equal the i-th input type of `g`
//! exactly (no coercion). The result takes the concatenated inputs of all
//! `fi`, so its arity is the sum of theirs, and produces `g`'s output.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::service::{DataType, DependencyGraph, Service, ServiceSignature, TypeParseError};
use crate::store::{Files, PackageRepo, StoreError, VersionRef, CONFIG_FILE};

/// File holding full definitions of composed services saved into a package.
pub const COMPOSED_FILE: &str = "services.json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type mismatch at input {position}: expected {expected}, found {found}")]
pub struct TypeError {
    pub position: usize,
    pub expected: DataType,
    pub found: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypecheckError {
    #[error("package not found: {0}")]
    PackageNotFound(String),
    #[error("package {0} has no {CONFIG_FILE}")]
    ConfigMissing(String),
    #[error("cannot parse {CONFIG_FILE}: {0}")]
    ConfigParse(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("arity mismatch: consumer takes {expected} inputs, {found} services supplied")]
    ArityMismatch { expected: usize, found: usize },
    #[error(transparent)]
    TypeMismatch(#[from] TypeError),
    #[error("store write failed: {0}")]
    StoreWrite(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for TypecheckError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::PackageNotFound(r) => TypecheckError::PackageNotFound(r),
            StoreError::StoreWrite(d) => TypecheckError::StoreWrite(d),
            other => TypecheckError::Store(other),
        }
    }
}

impl From<TypeParseError> for TypecheckError {
    fn from(e: TypeParseError) -> Self {
        match e {
            TypeParseError::UnknownType(t) => TypecheckError::UnknownType(t),
            TypeParseError::EmptySignature => TypecheckError::ConfigParse("empty signature".into()),
        }
    }
}

/// Parses a `zoo.json` config: a non-empty JSON object mapping exposed
/// function names to arrow type strings.
pub fn parse_config(bytes: &[u8]) -> Result<BTreeMap<String, ServiceSignature>, TypecheckError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| TypecheckError::ConfigParse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| TypecheckError::ConfigParse("config must be a JSON object".into()))?;
    if obj.is_empty() {
        return Err(TypecheckError::ConfigParse(
            "config must expose at least one function".into(),
        ));
    }
    obj.iter()
        .map(|(name, v)| {
            if name.trim().is_empty() {
                return Err(TypecheckError::ConfigParse("empty function name".into()));
            }
            let s = v
                .as_str()
                .ok_or_else(|| TypecheckError::ConfigParse(format!("signature of `{name}` must be a string")))?;
            Ok((name.clone(), s.parse::<ServiceSignature>()?))
        })
        .collect()
}

/// The services exposed by one package, keyed by function name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceDict {
    source: Option<VersionRef>,
    services: BTreeMap<String, Service>,
}

impl ServiceDict {
    pub fn get(&self, name: &str) -> Option<&Service> {
        self.services.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.services.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    /// Explicit version the dictionary was created from.
    pub fn source(&self) -> Option<&VersionRef> {
        self.source.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Service)> {
        self.services.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Reads the package config and creates one service per exposed function.
///
/// Services record the resolved explicit version of the package, so a
/// dictionary acquired through `latest` still publishes reproducibly.
pub fn create_service(r: &VersionRef, repo: &dyn PackageRepo) -> Result<ServiceDict, TypecheckError> {
    let manifest = repo.fetch(r)?;
    let cfg = manifest
        .config()
        .ok_or_else(|| TypecheckError::ConfigMissing(manifest.version_ref().to_string()))?;
    let config = parse_config(cfg)?;
    let composed: BTreeMap<String, Service> = match manifest.files.get(COMPOSED_FILE) {
        Some(bytes) => serde_json::from_slice(bytes).map_err(|e| TypecheckError::ConfigParse(e.to_string()))?,
        None => BTreeMap::new(),
    };
    let resolved = VersionRef {
        pin: r.pin,
        ..manifest.version_ref()
    };
    let mut services = BTreeMap::new();
    for (name, sig) in config {
        let service = match composed.get(&name) {
            Some(s) if *s.signature() == sig => s.clone().renamed(name.clone()),
            Some(s) => {
                return Err(TypecheckError::ConfigParse(format!(
                    "`{name}` declared as {sig} but its definition has type {}",
                    s.signature()
                )))
            }
            None => Service::basic(name.clone(), resolved.clone(), sig),
        };
        services.insert(name, service);
    }
    Ok(ServiceDict {
        source: Some(resolved),
        services,
    })
}

/// `[f1, ..., fn] $> g`.
pub fn compose(fs: &[Service], g: &Service) -> Result<Service, TypecheckError> {
    if fs.len() != g.arity() {
        return Err(TypecheckError::ArityMismatch {
            expected: g.arity(),
            found: fs.len(),
        });
    }
    for (position, (f, expected)) in fs.iter().zip(g.inputs()).enumerate() {
        if f.output() != expected {
            return Err(TypeError {
                position,
                expected: expected.clone(),
                found: f.output().clone(),
            }
            .into());
        }
    }

    let mut graph = DependencyGraph::new();
    let mut sinks = Vec::with_capacity(fs.len());
    for f in fs {
        let offset = graph.append(f.graph());
        sinks.push(offset + f.graph().sink().expect("services have a single sink"));
    }
    let g_offset = graph.append(g.graph());
    for (producer, (node, position)) in sinks.into_iter().zip(g.graph().unfed_inputs()) {
        graph
            .add_edge(producer, node + g_offset, position)
            .expect("disjoint subgraphs cannot form a cycle");
    }

    let inputs = fs.iter().flat_map(|f| f.inputs().iter().cloned()).collect();
    let signature = ServiceSignature::new(inputs, g.output().clone());
    let mut packages: Vec<VersionRef> = Vec::new();
    for p in fs.iter().chain(std::iter::once(g)).flat_map(|s| s.packages()) {
        if !packages.contains(p) {
            packages.push(p.clone());
        }
    }
    Ok(Service::from_parts(g.name(), packages, signature, graph).expect("composition preserves service invariants"))
}

/// Stores `s` as a new package exposing it under its name.
pub fn save_composed(s: &Service, repo: &dyn PackageRepo) -> Result<VersionRef, TypecheckError> {
    let config = serde_json::json!({ s.name(): s.type_string() });
    let mut defs = BTreeMap::new();
    defs.insert(s.name().to_string(), s);
    let files: Files = [
        (
            CONFIG_FILE.to_string(),
            serde_json::to_vec_pretty(&config).expect("config serializes"),
        ),
        (
            COMPOSED_FILE.to_string(),
            serde_json::to_vec_pretty(&defs).expect("service serializes"),
        ),
    ]
    .into();
    Ok(repo.publish_package(files, None, true)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{content_hash, MemoryStore, PackageStore};

    fn svc(name: &str, sig: &str) -> Service {
        Service::basic(name, VersionRef::explicit("pkg", "v1"), sig.parse().unwrap())
    }

    fn repo_with(gid: &str, config: &str) -> MemoryStore {
        let repo = MemoryStore::new();
        repo.insert(
            gid,
            "v1",
            [(CONFIG_FILE.to_string(), config.as_bytes().to_vec())].into(),
        );
        repo
    }

    #[test]
    fn create_from_config() {
        let repo = repo_with("aa36e", r#"{"infer": "png_img -> en_text"}"#);
        let dict = create_service(&"aa36e".parse().unwrap(), &repo).unwrap();
        assert_eq!(dict.names().collect::<Vec<_>>(), vec!["infer"]);
        let s = dict.get("infer").unwrap();
        assert_eq!(s.type_string(), "png_img -> en_text");
        assert_eq!(s.graph().nodes().len(), 1);
        assert_eq!(s.packages(), &[VersionRef::explicit("aa36e", "v1")]);
    }

    #[test]
    fn create_rejections() {
        let repo = repo_with("empty", "{}");
        assert!(matches!(
            create_service(&"empty".parse().unwrap(), &repo),
            Err(TypecheckError::ConfigParse(_))
        ));
        assert!(matches!(
            create_service(&"zzzzz".parse().unwrap(), &repo),
            Err(TypecheckError::PackageNotFound(_))
        ));
        let repo = repo_with("bad", r#"{"f": "png_img -> banana"}"#);
        assert_eq!(
            create_service(&"bad".parse().unwrap(), &repo),
            Err(TypecheckError::UnknownType("banana".into()))
        );
        let repo = MemoryStore::new();
        repo.insert("nocfg", "v1", [("main.ml".to_string(), vec![])].into());
        assert!(matches!(
            create_service(&"nocfg".parse().unwrap(), &repo),
            Err(TypecheckError::ConfigMissing(_))
        ));
        let repo = repo_with("notobj", "[1]");
        assert!(matches!(
            create_service(&"notobj".parse().unwrap(), &repo),
            Err(TypecheckError::ConfigParse(_))
        ));
    }

    #[test]
    fn arity_is_sum_of_components() {
        let f1 = svc("f1", "int -> float -> png_img");
        let f2 = svc("f2", "bool -> bool -> bool -> en_text");
        let g = svc("g", "png_img -> en_text -> fr_text");
        let s = compose(&[f1, f2], &g).unwrap();
        assert_eq!(s.arity(), 5);
        assert_eq!(s.type_string(), "int -> float -> bool -> bool -> bool -> fr_text");
        assert_eq!(s.graph().nodes().len(), 3);
        assert_eq!(s.graph().unfed_inputs().len(), 5);
    }

    #[test]
    fn single_chain() {
        let s = compose(&[svc("f", "png_img -> png_img")], &svc("g", "png_img -> en_text")).unwrap();
        assert_eq!(s.type_string(), "png_img -> en_text");
        assert_eq!(s.packages().len(), 1);
    }

    #[test]
    fn mismatch_reported_at_position() {
        let err = compose(&[svc("f", "jpeg_img")], &svc("g", "png_img -> en_text")).unwrap_err();
        assert_eq!(
            err,
            TypecheckError::TypeMismatch(TypeError {
                position: 0,
                expected: DataType::png_img(),
                found: DataType::jpeg_img(),
            })
        );
        let err = compose(&[svc("f", "int")], &svc("g", "int -> int -> int")).unwrap_err();
        assert_eq!(err, TypecheckError::ArityMismatch { expected: 2, found: 1 });
    }

    #[test]
    fn associativity_of_chains() {
        let f = svc("f", "int -> png_img");
        let g = svc("g", "png_img -> en_text");
        let h = svc("h", "en_text -> fr_text");
        let left = compose(&[compose(std::slice::from_ref(&f), &g).unwrap()], &h).unwrap();
        let right = compose(&[f], &compose(&[g], &h).unwrap()).unwrap();
        assert_eq!(left.signature(), right.signature());
        assert_eq!(left.graph().canonical_form(), right.graph().canonical_form());
    }

    #[test]
    fn save_and_recreate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap();
        let f = svc("f", "int -> png_img");
        let s = compose(&[f], &svc("g", "png_img -> en_text"))
            .unwrap()
            .renamed("pipeline");
        let r1 = save_composed(&s, &store).unwrap();
        let r2 = save_composed(&s, &store).unwrap();
        assert_ne!(r1, r2);
        let m1 = store.fetch(&r1).unwrap();
        let m2 = store.fetch(&r2).unwrap();
        assert_eq!(content_hash(&m1.files), content_hash(&m2.files));
        assert_eq!(m1.files, m2.files);

        let dict = create_service(&r1, &store).unwrap();
        let back = dict.get("pipeline").unwrap();
        assert_eq!(back.signature(), s.signature());
        assert_eq!(back.graph().canonical_form(), s.graph().canonical_form());
    }

    #[test]
    fn save_into_read_only_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = PackageStore::open(dir.path()).unwrap().read_only(true);
        assert!(matches!(
            save_composed(&svc("f", "int"), &store),
            Err(TypecheckError::StoreWrite(_))
        ));
    }
}
