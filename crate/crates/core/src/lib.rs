//! Finite-dimensional constructions around flat bi-unitary connections:
//! Dynkin graphs with Perron-Frobenius data, connections and their fusion
//! families, string algebras and Bratteli diagrams, projector matrix product
//! operators, fusion rings with modular data and modular invariants, and
//! tube algebras with their anyon decomposition.
//!
//! Numerical code is generic over [`Real`] (`f32`/`f64`); the aliases below
//! fix `f64`, which is what the CLI and the acceptance suite use.

pub mod connection;
pub mod cyclotomic;
pub mod error;
pub mod exact;
pub mod fusion;
pub mod graph;
pub mod linalg;
pub mod modular;
pub mod path_algebra;
pub mod scalar;
pub mod tensor_network;
pub mod tube;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Cx, Real};

pub type C64 = Cx<f64>;
pub type PfData64 = graph::PfData<f64>;
