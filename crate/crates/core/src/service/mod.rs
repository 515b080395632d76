//! The service abstraction: package references, an arrow-typed signature
//! and the dependency graph describing how the service is wired.

mod graph;
mod types;
mod value;

pub use graph::{DepNode, DependencyGraph, Edge, GraphError, NodeId};
pub use types::{
    format_type_string, parse_type_string, register_alias, register_media_subtype, DataType, MediaBase, PrimitiveKind,
    ServiceSignature, TypeParseError,
};
pub use value::{Payload, TypedValue, ValueError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::VersionRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node `{function}` references package `{package}` which the service does not list")]
    UnlistedPackage { function: String, package: String },
    #[error("signature has {declared} inputs but the graph has {unfed} unfed input positions")]
    InputCount { declared: usize, unfed: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawService")]
pub struct Service {
    name: String,
    packages: Vec<VersionRef>,
    signature: ServiceSignature,
    graph: DependencyGraph,
}

#[derive(Deserialize)]
struct RawService {
    name: String,
    packages: Vec<VersionRef>,
    signature: ServiceSignature,
    graph: DependencyGraph,
}

impl TryFrom<RawService> for Service {
    type Error = ServiceError;

    fn try_from(raw: RawService) -> Result<Self, ServiceError> {
        Service::from_parts(raw.name, raw.packages, raw.signature, raw.graph)
    }
}

impl Service {
    /// A service backed by one package function.
    pub fn basic(name: impl Into<String>, package: VersionRef, signature: ServiceSignature) -> Self {
        let name = name.into();
        let node = DepNode::new(name.clone(), package.to_string(), signature.arity());
        Self {
            name,
            packages: vec![package],
            signature,
            graph: DependencyGraph::single(node),
        }
    }

    pub fn from_parts(
        name: impl Into<String>,
        packages: Vec<VersionRef>,
        signature: ServiceSignature,
        graph: DependencyGraph,
    ) -> Result<Self, ServiceError> {
        graph.sink()?;
        for n in graph.nodes() {
            if !packages.iter().any(|p| p.to_string() == n.package_id) {
                return Err(ServiceError::UnlistedPackage {
                    function: n.function_name.clone(),
                    package: n.package_id.clone(),
                });
            }
        }
        let unfed = graph.unfed_inputs().len();
        if unfed != signature.arity() {
            return Err(ServiceError::InputCount {
                declared: signature.arity(),
                unfed,
            });
        }
        Ok(Self {
            name: name.into(),
            packages,
            signature,
            graph,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn packages(&self) -> &[VersionRef] {
        &self.packages
    }

    pub fn signature(&self) -> &ServiceSignature {
        &self.signature
    }

    pub fn graph(&self) -> &DependencyGraph {
        &self.graph
    }

    pub fn arity(&self) -> usize {
        self.signature.arity()
    }

    pub fn inputs(&self) -> &[DataType] {
        &self.signature.inputs
    }

    pub fn output(&self) -> &DataType {
        &self.signature.output
    }

    pub fn type_string(&self) -> String {
        self.signature.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkg(s: &str) -> VersionRef {
        s.parse().unwrap()
    }

    #[test]
    fn basic_service_shape() {
        let s = Service::basic("infer", pkg("aa36e/v1"), "png_img -> en_text".parse().unwrap());
        assert_eq!(s.graph().nodes().len(), 1);
        assert_eq!(s.graph().nodes()[0], DepNode::new("infer", "aa36e/v1", 1));
        assert_eq!(s.graph().unfed_inputs().len(), s.arity());
    }

    #[test]
    fn from_parts_checks_invariants() {
        let graph = DependencyGraph::single(DepNode::new("f", "p/1", 2));
        let sig: ServiceSignature = "int -> int -> int".parse().unwrap();
        assert!(Service::from_parts("f", vec![pkg("p/1")], sig.clone(), graph.clone()).is_ok());
        assert!(matches!(
            Service::from_parts("f", vec![pkg("q/1")], sig, graph.clone()),
            Err(ServiceError::UnlistedPackage { .. })
        ));
        assert!(matches!(
            Service::from_parts("f", vec![pkg("p/1")], "int".parse().unwrap(), graph),
            Err(ServiceError::InputCount { declared: 0, unfed: 2 })
        ));
    }

    #[test]
    fn json_round_trip() {
        let s = Service::basic("infer", pkg("aa36e/v1/pin"), "png_img -> en_text".parse().unwrap());
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"png_img -> en_text\""));
        assert_eq!(serde_json::from_str::<Service>(&text).unwrap(), s);
    }
}
