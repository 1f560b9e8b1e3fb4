//! Numerical machinery for the Finsler N-Liouville equation `−Q_N u = V e^u`.

// `!(x > 0.0)` rejects NaN too; stencil code indexes several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod bubble;
pub mod error;
pub mod field;
pub mod finsler;
pub mod grid;
pub mod io;
pub mod lab;
pub mod linalg;
pub mod operator;
pub mod parallel;
pub mod quadrature;
pub mod radial;
pub mod solver;

pub use error::{Error, Result};
pub use finsler::{liouville_constant, wulff_volume, NormFamily, NormSpec, VolumeMethod, WulffGeometry};
