//! Significant-wave-height estimation over a lat/lon grid from sparse buoy
//! observations.
//!
//! The pipeline renders a structured text prompt and a trainable soft prompt,
//! encodes buoy locations as Z-order bit codes and buoy series as overlapping
//! patches, runs everything through a frozen transformer whose positional
//! table is the only tuned backbone array, and projects the pooled hidden
//! states onto the grid. Training fits buoy observations while a weighted
//! penalty pulls the estimate toward numerical-model output.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod patch;
pub mod prompt;
pub mod real;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod zorder;

pub use dataset::{BuoyDataset, DatasetMeta, SWH_FEATURE};
pub use error::{Error, Result};
pub use grid::{FieldRole, GridField, GridSpec};
pub use real::Real;
pub use synth::{synth_generate, Synthetic};
pub use tensor::{Graph, Tensor, Var};
