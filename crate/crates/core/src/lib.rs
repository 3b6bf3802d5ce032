//! Weighted translation operators on lattice groups, with executable checks
//! of the hypercyclicity conditions built from their weight products.

pub mod constructions;
pub mod criteria;
pub mod error;
pub mod funcspace;
pub mod group;
pub mod lab;
pub mod numeric;
pub mod sampling;
pub mod translation;
pub mod weights;

pub use error::{Error, Result};
pub use funcspace::{LatticeFunction, NormParam};
pub use group::{Aperiodicity, CompactRegion, GroupModel, GroupPoint};
pub use translation::OperatorSpec;
pub use weights::{ProductValue, WeightSpec};
