//! 16-value codes on [−1, 1] and their constructions.

mod af4;
mod balanced;
mod io;
mod l1;
mod nf4;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use af4::{af4_code, af4_code_with, stationarity_step, Af4Options, StationarityStepper};
pub use balanced::{
    balanced_code, balanced_code_for, balanced_code_for_block, balanced_code_with_endpoints,
    balanced_code_with_endpoints_for, feasible_seed_range, uniform_bins, uniform_bins_for,
    FeasibleSeeds, DEFAULT_SEED_SCAN,
};
pub use io::{code_read, code_write, CODE_FORMAT};
pub use l1::{expected_l1, expected_l1_with};
pub use nf4::{nf4_code, Nf4Variant, NF4_DELTA};

use crate::distributions::ScaledMaxDistribution;
use crate::error::{Error, Result};

pub const CODE_LEN: usize = 16;

/// Free-form construction metadata stored alongside a code.
pub type Params = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeKind {
    Nf4QuantileOfAverage,
    Nf4AverageOfQuantile,
    Af4,
    Balanced,
    BalancedWithEndpoints,
    Custom,
}

impl CodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CodeKind::Nf4QuantileOfAverage => "nf4_quantile_of_average",
            CodeKind::Nf4AverageOfQuantile => "nf4_average_of_quantile",
            CodeKind::Af4 => "af4",
            CodeKind::Balanced => "balanced",
            CodeKind::BalancedWithEndpoints => "balanced_with_endpoints",
            CodeKind::Custom => "custom",
        }
    }

    fn requires_fixed_points(&self) -> bool {
        matches!(
            self,
            CodeKind::Nf4QuantileOfAverage | CodeKind::Nf4AverageOfQuantile | CodeKind::Af4
        )
    }

    fn requires_block_size(&self) -> bool {
        matches!(
            self,
            CodeKind::Af4 | CodeKind::Balanced | CodeKind::BalancedWithEndpoints
        )
    }
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nf4_quantile_of_average" => CodeKind::Nf4QuantileOfAverage,
            "nf4_average_of_quantile" => CodeKind::Nf4AverageOfQuantile,
            "af4" => CodeKind::Af4,
            "balanced" => CodeKind::Balanced,
            "balanced_with_endpoints" => CodeKind::BalancedWithEndpoints,
            "custom" => CodeKind::Custom,
            other => return Err(Error::domain(format!("unknown code kind {other:?}"))),
        })
    }
}

/// An ordered 16-value quantization code in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Code16 {
    values: [f64; CODE_LEN],
    kind: CodeKind,
    block_size: Option<usize>,
    params: Params,
}

/// Describes the first violated invariant, with 1-based value indices.
fn check_values(values: &[f64]) -> std::result::Result<(), String> {
    if values.len() != CODE_LEN {
        return Err(format!(
            "expected {CODE_LEN} code values, found {}",
            values.len()
        ));
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
            return Err(format!("code value q{} = {v} is outside [-1, 1]", i + 1));
        }
    }
    for (i, w) in values.windows(2).enumerate() {
        if !(w[0] < w[1]) {
            return Err(format!(
                "code values not strictly increasing at index {}: q{} = {} >= q{} = {}",
                i + 1,
                i + 1,
                w[0],
                i + 2,
                w[1]
            ));
        }
    }
    Ok(())
}

impl Code16 {
    pub fn new(
        values: [f64; CODE_LEN],
        kind: CodeKind,
        block_size: Option<usize>,
        params: Params,
    ) -> Result<Self> {
        check_values(&values).map_err(Error::Domain)?;
        if kind.requires_fixed_points()
            && (values[0] != -1.0 || values[7] != 0.0 || values[15] != 1.0)
        {
            return Err(Error::domain(format!(
                "{kind} codes need q1 = -1, q8 = 0, q16 = 1"
            )));
        }
        if kind == CodeKind::BalancedWithEndpoints
            && ![-1.0, 0.0, 1.0].iter().all(|v| values.contains(v))
        {
            return Err(Error::domain(
                "balanced_with_endpoints codes must contain -1, 0 and 1",
            ));
        }
        if kind.requires_block_size() && block_size.is_none() {
            return Err(Error::domain(format!("{kind} codes need a block size")));
        }
        Ok(Self {
            values,
            kind,
            block_size,
            params,
        })
    }

    pub fn custom(values: [f64; CODE_LEN]) -> Result<Self> {
        Self::new(values, CodeKind::Custom, None, Params::new())
    }

    pub fn values(&self) -> &[f64; CODE_LEN] {
        &self.values
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn block_size(&self) -> Option<usize> {
        self.block_size
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Boundaries between the nearest-value regions of consecutive values.
    pub fn region_edges(&self) -> [f64; CODE_LEN - 1] {
        std::array::from_fn(|j| 0.5 * (self.values[j] + self.values[j + 1]))
    }

    /// argmin_j |q_j − x|, ties going to the lower index.
    #[inline]
    pub fn nearest_index(&self, x: f64) -> usize {
        let q = &self.values;
        // Start from the midpoint partition, then settle on the exact argmin
        // with the tie rule; |q_j − x| is unimodal in j.
        let mut j = q[1..].partition_point(|&v| v < x);
        while j + 1 < CODE_LEN && (q[j + 1] - x).abs() < (q[j] - x).abs() {
            j += 1;
        }
        while j > 0 && (q[j - 1] - x).abs() <= (q[j] - x).abs() {
            j -= 1;
        }
        j
    }

    /// Largest gap between adjacent values.
    pub fn max_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Probability that an entry distributed as `dist` is mapped to each value.
    pub fn usage_probabilities(&self, dist: &ScaledMaxDistribution) -> [f64; CODE_LEN] {
        let edges = self.region_edges();
        let mut lower = 0.0;
        std::array::from_fn(|j| {
            let upper = if j + 1 < CODE_LEN {
                dist.cdf(edges[j])
            } else {
                1.0
            };
            let p = upper - lower;
            lower = upper;
            p
        })
    }

    /// For each interior index `j` (0-based) other than the fixed zero of
    /// NF4/AF4 codes: P[mid_{j−1} < X < q_j] − P[q_j < X < mid_j].
    pub fn median_residuals(&self, dist: &ScaledMaxDistribution) -> Vec<(usize, f64)> {
        let q = &self.values;
        (1..CODE_LEN - 1)
            .filter(|&j| !(self.kind.requires_fixed_points() && j == 7))
            .map(|j| {
                let left = dist.cdf((q[j - 1] + q[j]) / 2.0);
                let at = dist.cdf(q[j]);
                let right = dist.cdf((q[j] + q[j + 1]) / 2.0);
                (j, (at - left) - (right - at))
            })
            .collect()
    }

    pub(crate) fn with_params(mut self, params: Params) -> Self {
        self.params = params;
        self
    }
}

/// 17 nondecreasing bin edges from −1 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    edges: [f64; CODE_LEN + 1],
    block_size: Option<usize>,
}

impl BinEdges {
    pub fn new(edges: [f64; CODE_LEN + 1], block_size: Option<usize>) -> Result<Self> {
        if edges[0] != -1.0 || edges[CODE_LEN] != 1.0 {
            return Err(Error::domain(format!(
                "bin edges must run from -1 to 1, got {} .. {}",
                edges[0], edges[CODE_LEN]
            )));
        }
        if let Some(k) = edges.windows(2).position(|w| !(w[0] <= w[1])) {
            return Err(Error::domain(format!(
                "bin edges decrease at b{} = {} > b{} = {}",
                k + 1,
                edges[k],
                k + 2,
                edges[k + 1]
            )));
        }
        Ok(Self { edges, block_size })
    }

    /// `n` evenly spaced bins on [−1, 1].
    pub fn even() -> Self {
        let edges = std::array::from_fn(|k| {
            if k == CODE_LEN {
                1.0
            } else {
                -1.0 + 2.0 * k as f64 / CODE_LEN as f64
            }
        });
        Self {
            edges,
            block_size: None,
        }
    }

    pub fn edges(&self) -> &[f64; CODE_LEN + 1] {
        &self.edges
    }

    pub fn block_size(&self) -> Option<usize> {
        self.block_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> [f64; 16] {
        std::array::from_fn(|j| -1.0 + 2.0 * j as f64 / 15.0)
    }

    #[test]
    fn validation_messages() {
        let mut v = linear();
        v.swap(4, 5);
        let e = Code16::custom(v).unwrap_err().to_string();
        assert!(e.contains("index 5"), "{e}");
        let mut v = linear();
        v[15] = 1.5;
        assert!(Code16::custom(v).is_err());
        let e = Code16::new(linear(), CodeKind::Af4, Some(64), Params::new())
            .unwrap_err()
            .to_string();
        assert!(e.contains("q8 = 0"), "{e}");
        let e = check_values(&linear()[..15]).unwrap_err();
        assert_eq!(e, "expected 16 code values, found 15");
    }

    #[test]
    fn nearest_index_matches_scan_with_lower_ties() {
        let code = Code16::custom(linear()).unwrap();
        let edges = code.region_edges();
        // exact midpoints tie and go to the lower index
        for (j, &e) in edges.iter().enumerate() {
            let d0 = (code.values()[j] - e).abs();
            let d1 = (code.values()[j + 1] - e).abs();
            let expect = if d1 < d0 { j + 1 } else { j };
            assert_eq!(code.nearest_index(e), expect);
        }
        assert_eq!(code.nearest_index(-5.0), 0);
        assert_eq!(code.nearest_index(5.0), 15);
        for i in 0..=2000 {
            let x = -1.1 + 2.2 * i as f64 / 2000.0;
            let brute = (0..16)
                .min_by(|&a, &b| {
                    let da = (code.values()[a] - x).abs();
                    let db = (code.values()[b] - x).abs();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(code.nearest_index(x), brute, "x = {x}");
        }
    }

    #[test]
    fn kind_round_trips_through_str() {
        for k in [
            CodeKind::Nf4QuantileOfAverage,
            CodeKind::Nf4AverageOfQuantile,
            CodeKind::Af4,
            CodeKind::Balanced,
            CodeKind::BalancedWithEndpoints,
            CodeKind::Custom,
        ] {
            assert_eq!(k.as_str().parse::<CodeKind>().unwrap(), k);
        }
        assert!("nf5".parse::<CodeKind>().is_err());
    }

    #[test]
    fn usage_probabilities_sum_to_one() {
        let d = ScaledMaxDistribution::new(64).unwrap();
        let code = nf4_code(Nf4Variant::QuantileOfAverage);
        let u = code.usage_probabilities(&d);
        assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(u.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn bin_edges_validation() {
        let mut e = *BinEdges::even().edges();
        assert!(BinEdges::new(e, None).is_ok());
        e[3] = 0.9;
        assert!(BinEdges::new(e, None).is_err());
        let mut e = *BinEdges::even().edges();
        e[0] = -2.0;
        assert!(BinEdges::new(e, None).is_err());
    }
}
