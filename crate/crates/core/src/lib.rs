//! Zero-shot CT super-resolution.
//!
//! A single acquired parallel-beam sinogram is reconstructed at twice its
//! detector resolution by an unrolled three-block gradient-descent network.
//! The network is trained on a self-generated lower-resolution copy of the
//! same sinogram and then applied to the sinogram itself.

pub mod conv;
pub mod error;
pub mod foe;
pub mod io;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod resample;
pub mod rng;
pub mod tomo;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{Geometry, Grid, Image, Sinogram};
