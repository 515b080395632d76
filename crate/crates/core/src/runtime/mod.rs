//! Service execution and the numerical kernels behind the benchmarks.

mod gd;
pub mod library;
mod ndarray;

pub use gd::{
    central_difference, gradient_descent, gradient_descent_trace, gradient_descent_with, GdConfig, GdError, GdOutcome,
    Init,
};
pub use ndarray::{conv2d_valid, nd_fold, nd_map, Ndarray, ShapeError};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::service::{DataType, Service, ServiceSignature, TypedValue};
use crate::store::Files;

pub type PrimitiveFn = Arc<dyn Fn(&[TypedValue]) -> Result<TypedValue, String> + Send + Sync>;

/// An executable function together with the signature it declares.
#[derive(Clone)]
pub struct Primitive {
    pub signature: ServiceSignature,
    func: PrimitiveFn,
}

impl Primitive {
    pub fn call(&self, args: &[TypedValue]) -> Result<TypedValue, String> {
        (self.func)(args)
    }
}

impl fmt::Debug for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Primitive({})", self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("expected {expected} inputs, got {found}")]
    InputCountMismatch { expected: usize, found: usize },
    #[error("input {position} has type {found}, expected {expected}")]
    InputTypeMismatch {
        position: usize,
        expected: DataType,
        found: DataType,
    },
    #[error("no primitive `{name}` registered for package {package}")]
    MissingPrimitive { package: String, name: String },
    #[error("primitive `{name}` declares {declared} but the service graph uses it as {used}")]
    SignatureMismatch {
        name: String,
        declared: String,
        used: String,
    },
    #[error("primitive `{name}` failed: {detail}")]
    PrimitiveFailure { name: String, detail: String },
}

/// Executable primitives keyed by (package id, function name).
#[derive(Clone, Default)]
pub struct PrimitiveRegistry {
    prims: BTreeMap<(String, String), Primitive>,
}

fn gid_of(package_id: &str) -> &str {
    package_id.split('/').next().unwrap_or(package_id)
}

impl PrimitiveRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The use-case stubs plus the small numeric library.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        library::register_all(&mut reg);
        reg
    }

    pub fn register<F>(&mut self, gid: &str, name: &str, signature: &str, func: F)
    where
        F: Fn(&[TypedValue]) -> Result<TypedValue, String> + Send + Sync + 'static,
    {
        let signature = signature
            .parse()
            .unwrap_or_else(|e| panic!("bad signature for {gid}#{name}: {e}"));
        self.prims.insert(
            (gid.to_string(), name.to_string()),
            Primitive {
                signature,
                func: Arc::new(func),
            },
        );
    }

    /// Looks a function up by package id (any version of the package).
    pub fn get(&self, package_id: &str, name: &str) -> Option<&Primitive> {
        self.prims.get(&(gid_of(package_id).to_string(), name.to_string()))
    }

    pub fn gids(&self) -> Vec<&str> {
        let mut g: Vec<&str> = self.prims.keys().map(|(g, _)| g.as_str()).collect();
        g.dedup();
        g
    }

    pub fn functions<'a>(&'a self, gid: &'a str) -> impl Iterator<Item = (&'a str, &'a Primitive)> + 'a {
        self.prims
            .iter()
            .filter(move |((g, _), _)| g == gid)
            .map(|((_, n), p)| (n.as_str(), p))
    }

    /// A `zoo.json` declaring every primitive registered under `gid`.
    pub fn config_for(&self, gid: &str) -> Files {
        let cfg: serde_json::Map<String, serde_json::Value> = self
            .functions(gid)
            .map(|(n, p)| (n.to_string(), p.signature.to_string().into()))
            .collect();
        [(
            crate::store::CONFIG_FILE.to_string(),
            serde_json::to_vec_pretty(&cfg).expect("config serializes"),
        )]
        .into()
    }

    /// Checks that the declared primitives match a package config.
    pub fn matches_config(&self, gid: &str, config: &BTreeMap<String, ServiceSignature>) -> Result<(), ExecError> {
        for (name, sig) in config {
            let p = self.get(gid, name).ok_or_else(|| ExecError::MissingPrimitive {
                package: gid.to_string(),
                name: name.clone(),
            })?;
            if p.signature != *sig {
                return Err(ExecError::SignatureMismatch {
                    name: name.clone(),
                    declared: p.signature.to_string(),
                    used: sig.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Checks arguments against a list of expected types.
pub fn check_inputs(expected: &[DataType], inputs: &[TypedValue]) -> Result<(), ExecError> {
    if inputs.len() != expected.len() {
        return Err(ExecError::InputCountMismatch {
            expected: expected.len(),
            found: inputs.len(),
        });
    }
    for (position, (want, v)) in expected.iter().zip(inputs).enumerate() {
        if v.dtype() != want {
            return Err(ExecError::InputTypeMismatch {
                position,
                expected: want.clone(),
                found: v.dtype().clone(),
            });
        }
    }
    Ok(())
}

/// Evaluates the service graph in topological order.
pub fn execute(s: &Service, inputs: &[TypedValue], reg: &PrimitiveRegistry) -> Result<TypedValue, ExecError> {
    check_inputs(s.inputs(), inputs)?;
    let graph = s.graph();
    let slots: BTreeMap<(usize, usize), usize> = graph
        .unfed_inputs()
        .into_iter()
        .enumerate()
        .map(|(i, slot)| (slot, i))
        .collect();
    let mut values: Vec<Option<TypedValue>> = vec![None; graph.nodes().len()];
    for id in graph.topo_order() {
        let node = &graph.nodes()[id];
        let prim = reg
            .get(&node.package_id, &node.function_name)
            .ok_or_else(|| ExecError::MissingPrimitive {
                package: node.package_id.clone(),
                name: node.function_name.clone(),
            })?;
        let args: Vec<TypedValue> = (0..node.arity)
            .map(|p| match graph.producer_of(id, p) {
                Some(src) => values[src].clone().expect("topological order computes producers first"),
                None => inputs[slots[&(id, p)]].clone(),
            })
            .collect();
        let mismatch = || ExecError::SignatureMismatch {
            name: node.function_name.clone(),
            declared: prim.signature.to_string(),
            used: format!("{} inputs", node.arity),
        };
        if prim.signature.arity() != node.arity {
            return Err(mismatch());
        }
        check_inputs(&prim.signature.inputs, &args).map_err(|_| mismatch())?;
        let out = prim.call(&args).map_err(|detail| ExecError::PrimitiveFailure {
            name: node.function_name.clone(),
            detail,
        })?;
        if *out.dtype() != prim.signature.output {
            return Err(ExecError::PrimitiveFailure {
                name: node.function_name.clone(),
                detail: format!("returned {} instead of {}", out.dtype(), prim.signature.output),
            });
        }
        values[id] = Some(out);
    }
    let sink = graph.sink().expect("services have a single sink");
    Ok(values[sink].take().expect("sink evaluated"))
}
