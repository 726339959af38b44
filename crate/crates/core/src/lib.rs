//! Random walks among random conductances on `Z^d`, conditioned to keep their
//! first coordinate positive, and the tools to compare them with their
//! Brownian meander limit.

pub mod conditioning;
pub mod environment;
pub mod error;
pub mod kernel;
pub mod lattice;
pub mod meander;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod scaling;
pub mod verify;
pub mod walk;

mod par;

pub use environment::{Environment, EnvironmentManifest, Generator};
pub use error::{Error, Result};
pub use lattice::{EdgeId, Point};
pub use walk::{TargetSet, WalkPath};

