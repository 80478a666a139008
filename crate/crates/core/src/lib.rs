#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod concepts;
pub mod data;
pub mod eigen;
pub mod error;
pub mod drift;
pub mod kernels;
pub mod pipeline;
pub mod representation;
pub mod rng;
pub mod segmentation;

pub use error::{Error, Result};
