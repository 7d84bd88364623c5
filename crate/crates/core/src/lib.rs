//! Market-guided transformer for cross-sectional stock ranking.
//!
//! [`data`] turns price panels and index series into sample windows,
//! [`model`] runs the gated intra-stock, inter-stock and temporal attention
//! stack on the [`numerics`] tape, [`training`] fits it, [`evaluation`]
//! scores it and [`explain`] turns its attention into attribution maps.
//! [`cli`] wires these into the `master` binary.

pub mod cli;
pub mod data;
pub mod evaluation;
pub mod explain;
pub mod flops;
pub mod model;
pub mod numerics;
pub mod training;
