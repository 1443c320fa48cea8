//! Random perforated domains and the homogenization of the Poisson equation
//! with the capacitary "strange term".

pub mod aabb;
pub mod capacity;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod measure;
pub mod pde;
pub mod pointproc;
pub mod rng;
pub mod spatial;

pub use aabb::Aabb;
pub use error::{Error, Result};
