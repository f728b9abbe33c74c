//! Geometry of the first-order jet bundle `J¹(T, M)`.

pub mod cli;
pub mod connection;
pub mod domain;
pub mod dtensor;
pub mod error;
pub mod exprlang;
pub mod geometry;
pub mod jetspace;
pub mod maps;
pub mod numdiff;
pub mod prolong;
pub mod sprays;
pub mod suite;

pub use error::{Error, Result};
