//! NormalFloat-4 built from Gaussian quantiles.

use super::{Code16, CodeKind, Params, CODE_LEN};
use crate::distributions::normal_quantile;

/// Probability offset of the outermost NF4 quantile, ½(1/32 + 1/30).
pub const NF4_DELTA: f64 = 0.5 * (1.0 / 32.0 + 1.0 / 30.0);

/// How the probability grid is mapped through Φ⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Nf4Variant {
    /// Φ⁻¹ of each grid probability, as bitsandbytes builds NF4.
    QuantileOfAverage,
    /// Each grid probability is read as the center of a cell one grid step
    /// wide and the two Φ⁻¹ values at the cell edges are averaged.
    AverageOfQuantile,
}

impl Nf4Variant {
    fn kind(self) -> CodeKind {
        match self {
            Nf4Variant::QuantileOfAverage => CodeKind::Nf4QuantileOfAverage,
            Nf4Variant::AverageOfQuantile => CodeKind::Nf4AverageOfQuantile,
        }
    }
}

/// Upper-half grid probability ½ + (½ − δ)·k/n; k = n gives 1 − δ on both
/// sides bit-for-bit.
fn upper_probability(k: usize, n: usize) -> f64 {
    0.5 + (0.5 - NF4_DELTA) * (k as f64 / n as f64)
}

fn magnitude(k: usize, n: usize, variant: Nf4Variant) -> f64 {
    let p = upper_probability(k, n);
    let q = |p: f64| normal_quantile(p).expect("grid probability in (0, 1)");
    match variant {
        Nf4Variant::QuantileOfAverage => q(p),
        // The outermost value stays at Φ⁻¹(1 − δ): on the 7-step side its
        // cell would extend past probability 1.
        Nf4Variant::AverageOfQuantile if k == n => q(p),
        Nf4Variant::AverageOfQuantile => {
            let half_step = 0.5 * (0.5 - NF4_DELTA) / n as f64;
            0.5 * (q(p - half_step) + q(p + half_step))
        }
    }
}

/// The 16-value NF4 code: 7 negative values from an 8-point grid on
/// [δ, ½], zero, and 8 positive values from a 9-point grid on [½, 1 − δ],
/// all divided by Φ⁻¹(1 − δ).
pub fn nf4_code(variant: Nf4Variant) -> Code16 {
    let scale = normal_quantile(1.0 - NF4_DELTA).expect("1 - delta in (0, 1)");
    let mut raw = [0.0; CODE_LEN];
    for k in 1..=7 {
        raw[7 - k] = -magnitude(k, 7, variant);
    }
    for k in 1..=8 {
        raw[7 + k] = magnitude(k, 8, variant);
    }
    let values = raw.map(|v| v / scale);
    let mut params = Params::new();
    params.insert("delta".into(), NF4_DELTA.into());
    params.insert("max_unnormalized".into(), scale.into());
    Code16::new(values, variant.kind(), None, params).expect("NF4 satisfies code invariants")
}
