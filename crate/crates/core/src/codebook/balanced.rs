//! Uniform-usage codes: every value receives probability 1/16 under F_X.
//!
//! The bins are the 1/16-quantiles of F_X. A code whose consecutive values
//! have the bin edges as midpoints maps exactly one bin onto each value, so
//! the whole code follows from its first value through q_k = 2·b_k − q_{k−1}.

use super::{BinEdges, Code16, CodeKind, Params, CODE_LEN};
use crate::distributions::ScaledMaxDistribution;
use crate::error::{Error, Result};

/// Seeds tried over [b₁, b₂] when searching for the feasible interval.
pub const DEFAULT_SEED_SCAN: usize = 1024;

/// Quantile bin edges of F_X(·; B).
fn small_block(block_size: usize) -> Error {
    Error::domain(format!(
        "block size must be ≥ 9 for uniform bins, got {block_size}"
    ))
}

pub fn uniform_bins(block_size: usize) -> Result<BinEdges> {
    if block_size < 9 {
        return Err(small_block(block_size));
    }
    uniform_bins_for(&ScaledMaxDistribution::new(block_size)?)
}

pub fn uniform_bins_for(dist: &ScaledMaxDistribution) -> Result<BinEdges> {
    let block_size = dist.block_size();
    if block_size < 9 {
        return Err(small_block(block_size));
    }
    let mut edges = [0.0; CODE_LEN + 1];
    edges[0] = -1.0;
    edges[CODE_LEN] = 1.0;
    for (k, e) in edges.iter_mut().enumerate().take(CODE_LEN).skip(1) {
        *e = if 2 * k == CODE_LEN {
            0.0
        } else {
            dist.quantile(k as f64 / CODE_LEN as f64)?
        };
    }
    BinEdges::new(edges, Some(block_size))
}

/// Runs the reflection recurrence and reports the first violated bound.
fn reflect(seed: f64, bins: &BinEdges) -> std::result::Result<[f64; CODE_LEN], String> {
    let b = bins.edges();
    let mut q = [0.0; CODE_LEN];
    q[0] = seed;
    for k in 1..CODE_LEN {
        q[k] = 2.0 * b[k] - q[k - 1];
    }
    for (k, &v) in q.iter().enumerate() {
        if !(b[k] <= v && v <= b[k + 1]) {
            return Err(format!(
                "q{} = {v} escapes its bin [{}, {}]",
                k + 1,
                b[k],
                b[k + 1]
            ));
        }
        if k > 0 && !(q[k - 1] < v) {
            return Err(format!(
                "q{} = {v} does not exceed q{} = {}",
                k + 1,
                k,
                q[k - 1]
            ));
        }
    }
    Ok(q)
}

/// The balanced code generated from `seed` = q₁.
pub fn balanced_code(seed: f64, bins: &BinEdges) -> Result<Code16> {
    let b = bins.edges();
    if !(b[0] <= seed && seed <= b[1]) {
        return Err(Error::domain(format!(
            "seed {seed} is outside the first bin [{}, {}]",
            b[0], b[1]
        )));
    }
    let values = reflect(seed, bins)
        .map_err(|msg| Error::Construction(format!("infeasible seed {seed}: {msg}")))?;
    let (kind, block_size) = match bins.block_size() {
        Some(n) => (CodeKind::Balanced, Some(n)),
        None => (CodeKind::Custom, None),
    };
    let mut params = Params::new();
    params.insert("seed_q1".into(), seed.into());
    Code16::new(values, kind, block_size, params)
}

/// Extent of the feasible seeds found by a grid scan of [b₁, b₂].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleSeeds {
    pub lo: f64,
    pub hi: f64,
    /// Feasible grid points among the scanned ones.
    pub count: usize,
}

impl FeasibleSeeds {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Scans `scan` evenly spaced seeds over [b₁, b₂]. The constraints are
/// affine in the seed, so the feasible set is an interval and its grid
/// points are contiguous.
pub fn feasible_seed_range(bins: &BinEdges, scan: usize) -> Result<FeasibleSeeds> {
    if scan < 2 {
        return Err(Error::domain("seed scan needs at least 2 points"));
    }
    let b = bins.edges();
    let mut found: Option<FeasibleSeeds> = None;
    for i in 0..scan {
        let s = b[0] + (b[1] - b[0]) * i as f64 / (scan - 1) as f64;
        if reflect(s, bins).is_ok() {
            let f = found.get_or_insert(FeasibleSeeds {
                lo: s,
                hi: s,
                count: 0,
            });
            f.hi = s;
            f.count += 1;
        }
    }
    found.ok_or_else(|| {
        Error::Construction(format!(
            "no feasible seed among {scan} points of [{}, {}]",
            b[0], b[1]
        ))
    })
}

/// Balanced code for `F_X(·; B)` seeded at the middle of the feasible range.
pub fn balanced_code_for_block(block_size: usize) -> Result<Code16> {
    if block_size < 9 {
        return Err(small_block(block_size));
    }
    balanced_code_for(&ScaledMaxDistribution::new(block_size)?)
}

pub fn balanced_code_for(dist: &ScaledMaxDistribution) -> Result<Code16> {
    let bins = uniform_bins_for(dist)?;
    let range = feasible_seed_range(&bins, DEFAULT_SEED_SCAN)?;
    let code = balanced_code(range.midpoint(), &bins)?;
    let mut params = code.params().clone();
    params.insert("feasible_lo".into(), range.lo.into());
    params.insert("feasible_hi".into(), range.hi.into());
    params.insert("scan_points".into(), DEFAULT_SEED_SCAN.into());
    Ok(code.with_params(params))
}

/// The balanced code with its values nearest −1, 0 and 1 replaced by
/// exactly those values (lower index on ties).
pub fn balanced_code_with_endpoints(block_size: usize) -> Result<Code16> {
    if block_size < 9 {
        return Err(small_block(block_size));
    }
    balanced_code_with_endpoints_for(&ScaledMaxDistribution::new(block_size)?)
}

pub fn balanced_code_with_endpoints_for(dist: &ScaledMaxDistribution) -> Result<Code16> {
    let base = balanced_code_for(dist)?;
    let mut values = *base.values();
    let mut replaced = Vec::new();
    for target in [-1.0, 0.0, 1.0] {
        let j = base.nearest_index(target);
        values[j] = target;
        replaced.push(j + 1);
    }
    let mut params = base.params().clone();
    params.insert("replaced_indices".into(), replaced.into());
    Code16::new(
        values,
        CodeKind::BalancedWithEndpoints,
        Some(dist.block_size()),
        params,
    )
    .map_err(|e| Error::Construction(format!("endpoint replacement broke the code: {e}")))
}
