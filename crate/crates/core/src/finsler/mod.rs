//! Finsler norms `F`, their fluxes, dual norms `F⁰` and Wulff-ball volumes.

mod dual;
mod norm;
mod volume;

pub use dual::{DUAL_MAX_ITER, DUAL_TOL};
pub use norm::{NormFamily, NormSpec};
pub use volume::{
    euclidean_ball_volume, liouville_constant, monte_carlo_volume_checked, wulff_volume,
    VolumeEstimate, VolumeMethod, WulffGeometry,
};
