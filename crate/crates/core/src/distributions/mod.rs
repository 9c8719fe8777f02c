//! Distribution numerics for absmax-normalized Gaussian blocks.
//!
//! A block of `B` standard normal draws is divided by its largest magnitude
//! `M`. Each normalized entry then has an atom of mass `1/(2B)` at each of
//! −1 and +1, and with probability `1 − 1/B` falls in the open interval,
//! where its law `G_B` is a mixture over `M` of normals truncated to
//! `[−M, M]` and rescaled to `[−1, 1]`.

mod normal;
mod scaled_max;

pub use normal::{
    halfnormal_cdf, halfnormal_quantile, normal_cdf, normal_pdf, normal_quantile, normal_sf,
    trunc_normal_cdf,
};
pub use scaled_max::{
    absmax_cdf, absmax_median, absmax_pdf, absmax_quantile, fx_cdf, fx_cdf_approx, fx_quantile,
    gb_cdf, ScaledMaxDistribution,
};

pub(crate) use normal::normal_interval_mass;
