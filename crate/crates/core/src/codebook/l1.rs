//! Expected absolute reconstruction error E[min_j |X − q_j|] under F_X.

use super::Code16;
use crate::distributions::{normal_interval_mass, normal_pdf, ScaledMaxDistribution};
use crate::error::{Error, Result};

/// ∫_a^b (y − c) φ(y) dy.
fn first_moment_about(a: f64, b: f64, c: f64) -> f64 {
    normal_pdf(a) - normal_pdf(b) - c * normal_interval_mass(a, b)
}

/// ∫_lo^hi |y − c| φ(y) dy for any c.
fn abs_moment(lo: f64, hi: f64, c: f64) -> f64 {
    let split = c.clamp(lo, hi);
    first_moment_about(split, hi, c) - first_moment_about(lo, split, c)
}

pub fn expected_l1(code: &Code16, block_size: usize) -> Result<f64> {
    if block_size < 2 {
        return Err(Error::domain(format!(
            "expected L1 needs block size >= 2, got {block_size}"
        )));
    }
    expected_l1_with(code, &ScaledMaxDistribution::new(block_size)?)
}

/// Uses the mixture table of `dist`: conditional on M = m the continuous
/// part is a truncated normal scaled by 1/m, whose absolute moments over
/// each nearest-value region are available in closed form.
pub fn expected_l1_with(code: &Code16, dist: &ScaledMaxDistribution) -> Result<f64> {
    let q = code.values();
    let edges = code.region_edges();
    let atoms = dist.atom_mass() * ((q[0] + 1.0).abs() + (1.0 - q[15]).abs());

    let mut continuous = 0.0;
    for node in dist.nodes() {
        let m = node.m;
        let mut sum = 0.0;
        for (j, &c) in q.iter().enumerate() {
            let lo = if j == 0 { -1.0 } else { edges[j - 1] };
            let hi = if j + 1 == q.len() { 1.0 } else { edges[j] };
            sum += abs_moment(m * lo, m * hi, m * c);
        }
        continuous += node.weight * sum / (m * node.z);
    }
    let value = atoms + dist.continuous_mass() * continuous;
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Root(format!("expected L1 evaluated to {value}")));
    }
    Ok(value)
}
