//! Semi-supervised graph learning for multi-sector regional economic
//! regression.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numeric piece
//! of the pipeline: pre-encoders for POI, street-view and mobility inputs,
//! the region graph model, a small reverse-mode differentiation core,
//! Laplacian/random-walk encodings, the GPS layer stack, the combined
//! infomax + masked regression objective, the training loop and Shapley
//! attribution. File formats and the command line live in the `regiongnn`
//! crate.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod explain;
pub mod gps;
pub mod gradcheck;
pub mod graph;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod params;
pub mod pse;
pub mod semiloss;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{
    mask_labels, split_districts, DistrictLabels, EdgeFeatures, EdgeList, FeatureLayout,
    RegionGraph, Split, SplitAssignment, SECTORS, SECTOR_NAMES,
};
pub use linalg::{solve_spd, sym_eig, Spectrum};
pub use params::{init_params, Adam, InitKind, ParamId, ParamSpec, ParamStore};
pub use synth::{synth_region, synth_region_detailed, PlantedModel, SynthConfig, SynthRegion};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
