//! Typed service composition: packages expose functions with arrow-typed
//! signatures, services compose into checked dataflow graphs, and composed
//! services publish to container, script or unikernel backends.

pub mod bench;
pub mod discovery;
pub mod dsl;
pub mod publish;
pub mod runtime;
pub mod service;
pub mod store;
pub mod typecheck;
pub mod usecase;

#[cfg(feature = "http")]
pub mod http;
