//! Core algorithms for turning per-axial-slice 2D tooth detections over a
//! CBCT-style voxel volume into labeled 3D bounding boxes.
//!
//! The pipeline stages, in processing order:
//!
//! 1. [`slab`] — find the vertical region that contains the dentition and
//!    pick equispaced axial slice indices for detection.
//! 2. [`detect`] — the detection contract (one labeled 2D box per tooth and
//!    slice) plus a synthetic detector with a configurable noise model.
//! 3. [`assign`] — rectangular minimum-cost assignment with forbidden pairs.
//! 4. [`reconstruct`] — slice-by-slice matching, track lifecycle, gap
//!    interpolation, and 3D box extraction.
//! 5. [`divide`] — flagging of fused upper/lower counterparts and the
//!    graph-based division surface that splits them.
//! 6. [`evaluate`] — outcome taxonomies and detection rate against ground
//!    truth.
//!
//! [`phantom`] generates synthetic dental volumes with exact ground truth;
//! it stands in for real scans in every test and benchmark. The crate is
//! `no_std` (with `alloc`); file formats and the CLI live in the companion
//! `toothbox` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assign;
pub mod detect;
pub mod divide;
pub mod error;
pub mod evaluate;
pub mod geom;
pub mod phantom;
pub mod reconstruct;
pub mod slab;
pub mod volume;

pub use error::CoreError;

/// Derives a per-stage seed from a root seed so that all randomness in a run
/// flows from one configuration value. SplitMix64 over `root + stream`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
