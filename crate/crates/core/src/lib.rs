//! Multi-view rigid registration of 3D scans.
//!
//! Relative motions between overlapping scan pairs are estimated with trimmed
//! ICP, stacked into a `4N x 4N` block matrix, completed through the
//! anti-symmetry `M_ji = M_ij^-1`, and decomposed into a rank-4 factorization
//! plus a sparse error term by a weighted L1 / nuclear-norm augmented
//! Lagrangian solver. Global motions are read back from the low-rank factor.
//!
//! The crate is `no_std` (with `alloc`). Enable `std` for `std::error::Error`
//! impls and `parallel` to run pairwise registrations on the rayon pool.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod cloud;
pub mod error;
pub mod graph;
pub mod nn;
pub mod pairwise;
pub mod pipeline;
pub mod recovery;
pub mod se3;
pub mod wlrs;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use graph::BlockMotionMatrix;
pub use nn::NeighborIndex;
pub use pairwise::{PairwiseEstimate, TrIcpConfig};
pub use pipeline::{PipelineConfig, RegistrationRun};
pub use se3::RigidMotion;
pub use wlrs::{DecompositionResult, WlrsConfig};

/// A point in 3D, in scene length units.
pub type Point3 = nalgebra::Vector3<f64>;
