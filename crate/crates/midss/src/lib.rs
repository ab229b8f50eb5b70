//! Mean-teacher semi-supervised segmentation for mixed-domain data, desk
//! scale: a labeled pool from one domain, unlabeled pools from several, and
//! a training loop that transfers knowledge through unified copy-paste
//! intermediates, symmetric pseudo-label guidance, and progressive amplitude
//! mixing.

pub mod augment;
pub mod data;
pub mod error;
pub mod exec;
pub mod fourier;
pub mod grid;
pub mod network;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod trainer;
pub mod ucp;

pub use error::{Error, Result};
pub use grid::{argmax_channels, elementwise_mix, Grid, OneHotMap};
pub use rng::SplitRng;
