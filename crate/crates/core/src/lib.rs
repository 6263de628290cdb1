//! Generalizable workspace occupancy prediction from posed RGB images.
//!
//! The pipeline lifts a handful of source views into a world-frame cost
//! volume, refines it with a 3D U-Net and decodes density and color with a
//! small MLP. Training supervises novel-view renderings of the field; the
//! per-point opacity doubles as a probabilistic occupancy estimate that is
//! scored against ground-truth depth.
//!
//! Module map:
//!
//! - [`geometry`]: pinhole cameras, poses, rays, boxes, voxel grids, interpolation
//! - [`scenegen`]: synthetic table-top scenes, analytic RGB-D oracle, camera rig, dataset IO
//! - [`model`]: feature extractor, cost volume, 3D U-Net, field MLP and their gradients
//! - [`renderer`]: ray sampling, compositing, depth and occupancy extraction
//! - [`training`]: loss, view selection, optimizer and the training loop
//! - [`evaluation`]: masked depth error, PSNR and the experiment matrix

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod par;
pub mod renderer;
pub mod rng;
pub mod scenegen;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
