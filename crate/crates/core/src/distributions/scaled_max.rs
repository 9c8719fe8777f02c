use std::f64::consts::FRAC_1_SQRT_2;

use super::normal::{
    halfnormal_log_cdf, halfnormal_quantile_upper, normal_log_pdf, normal_quantile,
    trunc_normal_cdf_unchecked,
};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, kronrod_nodes, QuadratureSettings};

/// Probability mass left outside the integration range for `M`, per side.
const TAIL_EPS: f64 = 1e-12;

/// Quantiles of `M` used as initial breakpoints so the first panels already
/// sit on the bulk of the (increasingly narrow) density of the maximum.
const BREAK_QUANTILES: [f64; 13] = [
    1e-9,
    1e-6,
    1e-3,
    0.02,
    0.1,
    0.25,
    0.5,
    0.75,
    0.9,
    0.98,
    0.999,
    1.0 - 1e-6,
    1.0 - 1e-9,
];

fn check_block_size(block_size: usize, min: usize) -> Result<()> {
    if block_size < min {
        return Err(Error::domain(format!(
            "block size must be >= {min}, got {block_size}"
        )));
    }
    Ok(())
}

/// P[M ≤ m] = Þ(m)^B for the absmax `M` of `B` standard normals.
pub fn absmax_cdf(m: f64, block_size: usize) -> Result<f64> {
    check_block_size(block_size, 1)?;
    if !(m >= 0.0) {
        return Err(Error::domain(format!("absmax CDF needs m >= 0, got {m}")));
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok((block_size as f64 * halfnormal_log_cdf(m)).exp())
}

/// Inverse of [`absmax_cdf`]: Þ⁻¹(u^(1/B)).
pub fn absmax_quantile(u: f64, block_size: usize) -> Result<f64> {
    check_block_size(block_size, 1)?;
    if !(0.0..1.0).contains(&u) {
        return Err(Error::domain(format!(
            "absmax quantile needs 0 <= u < 1, got {u}"
        )));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    Ok(absmax_quantile_unchecked(u, block_size))
}

fn absmax_quantile_unchecked(u: f64, block_size: usize) -> f64 {
    // 1 − u^(1/B) without cancellation
    let tail = -(u.ln() / block_size as f64).exp_m1();
    halfnormal_quantile_upper(tail)
}

/// Median of the block absmax, Þ⁻¹((1/2)^(1/B)).
pub fn absmax_median(block_size: usize) -> Result<f64> {
    check_block_size(block_size, 1)?;
    Ok(absmax_quantile_unchecked(0.5, block_size))
}

/// Density of the block absmax, 2B·Þ(m)^(B−1)·φ(m).
pub fn absmax_pdf(m: f64, block_size: usize) -> Result<f64> {
    check_block_size(block_size, 1)?;
    if !(m >= 0.0) {
        return Err(Error::domain(format!(
            "absmax density needs m >= 0, got {m}"
        )));
    }
    Ok(absmax_pdf_unchecked(m, block_size))
}

#[inline]
fn absmax_pdf_unchecked(m: f64, block_size: usize) -> f64 {
    let b = block_size as f64;
    if block_size == 1 {
        return 2.0 * (normal_log_pdf(m)).exp();
    }
    if m <= 0.0 {
        return 0.0;
    }
    ((2.0 * b).ln() + (b - 1.0) * halfnormal_log_cdf(m) + normal_log_pdf(m)).exp()
}

/// Integration breakpoints in `m`: `[m_lo, …, m_hi]` where the mass of `M`
/// below `m_lo` and above `m_hi` are each under `TAIL_EPS`.
fn mixture_breakpoints(block_size: usize) -> Vec<f64> {
    debug_assert!(block_size >= 2);
    let b = block_size as f64;
    let lo_tail = -(TAIL_EPS.ln() / (b - 1.0)).exp_m1();
    let m_lo = halfnormal_quantile_upper(lo_tail);
    let m_hi = -normal_quantile(TAIL_EPS / (2.0 * b)).expect("probability in (0, 1)");
    let mut points = vec![m_lo];
    for &u in &BREAK_QUANTILES {
        let m = absmax_quantile_unchecked(u, block_size);
        if m > *points.last().unwrap() && m < m_hi {
            points.push(m);
        }
    }
    points.push(m_hi);
    points
}

/// G_B(x) = ∫ p_M(m) Ψ(m·x; m, 1) dm evaluated by adaptive quadrature.
///
/// This is the direct route; [`ScaledMaxDistribution`] evaluates the same
/// integral from a cached node table and is what the rest of the crate uses.
pub fn gb_cdf(x: f64, block_size: usize, settings: &QuadratureSettings) -> Result<f64> {
    check_block_size(block_size, 2)?;
    settings.validate()?;
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("G_B is defined on [-1, 1], got {x}")));
    }
    let points = mixture_breakpoints(block_size);
    let r = integrate(
        |m| {
            let z = libm::erf(m * FRAC_1_SQRT_2);
            absmax_pdf_unchecked(m, block_size) * trunc_normal_cdf_unchecked(m * x, m, z)
        },
        &points,
        settings,
    )?;
    Ok(r.value)
}

/// One quadrature node of the mixture over the block maximum.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MixtureNode {
    pub m: f64,
    /// Normalized quadrature weight times p_M(m).
    pub weight: f64,
    /// Φ(m) − Φ(−m).
    pub z: f64,
}

/// The law F_X(·; B) of one absmax-normalized entry of a Gaussian block.
///
/// Construction integrates the density of the maximum adaptively and keeps
/// the resulting Kronrod nodes, so subsequent CDF, density and quantile
/// evaluations are deterministic finite sums. Weights are renormalized to sum
/// to one, which makes G_B(−1) = 0 and G_B(1) = 1 exact.
#[derive(Debug, Clone)]
pub struct ScaledMaxDistribution {
    block_size: usize,
    settings: QuadratureSettings,
    nodes: Vec<MixtureNode>,
    captured_mass: f64,
    median_absmax: f64,
}

impl ScaledMaxDistribution {
    pub fn new(block_size: usize) -> Result<Self> {
        Self::with_settings(block_size, QuadratureSettings::default())
    }

    pub fn with_settings(block_size: usize, settings: QuadratureSettings) -> Result<Self> {
        check_block_size(block_size, 1)?;
        settings.validate()?;
        let median_absmax = absmax_quantile_unchecked(0.5, block_size);
        if block_size == 1 {
            return Ok(Self {
                block_size,
                settings,
                nodes: Vec::new(),
                captured_mass: 1.0,
                median_absmax,
            });
        }

        let table_settings = QuadratureSettings {
            abs_tol: (settings.abs_tol * 1e-3).max(1e-15),
            ..settings
        };
        let pdf = |m: f64| absmax_pdf_unchecked(m, block_size);
        let integral = integrate(pdf, &mixture_breakpoints(block_size), &table_settings)?;

        let mut nodes = Vec::with_capacity(integral.panels.len() * 30);
        for panel in &integral.panels {
            let mid = 0.5 * (panel.a + panel.b);
            for (a, b) in [(panel.a, mid), (mid, panel.b)] {
                for (m, w) in kronrod_nodes(a, b) {
                    nodes.push(MixtureNode {
                        m,
                        weight: w * pdf(m),
                        z: libm::erf(m * FRAC_1_SQRT_2),
                    });
                }
            }
        }
        let total: f64 = nodes.iter().map(|n| n.weight).sum();
        for n in &mut nodes {
            n.weight /= total;
        }
        Ok(Self {
            block_size,
            settings,
            nodes,
            captured_mass: total,
            median_absmax,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn settings(&self) -> &QuadratureSettings {
        &self.settings
    }

    /// Mass 1/(2B) of each of the atoms at −1 and +1.
    pub fn atom_mass(&self) -> f64 {
        0.5 / self.block_size as f64
    }

    /// Probability 1 − 1/B that an entry is not the block maximum.
    pub fn continuous_mass(&self) -> f64 {
        1.0 - 1.0 / self.block_size as f64
    }

    /// Integral of the absmax density over the quadrature range before
    /// renormalization (one minus the truncated tails and quadrature error).
    pub fn captured_mass(&self) -> f64 {
        self.captured_mass
    }

    pub(crate) fn nodes(&self) -> &[MixtureNode] {
        &self.nodes
    }

    /// m₀ = Þ⁻¹(2^(−1/B)), the median of the block absmax.
    pub fn median_absmax(&self) -> f64 {
        self.median_absmax
    }

    fn lower_half_sum(&self, x: f64) -> f64 {
        debug_assert!((-1.0..=0.0).contains(&x));
        self.nodes
            .iter()
            .map(|n| n.weight * trunc_normal_cdf_unchecked(n.m * x, n.m, n.z))
            .sum()
    }

    /// G_B(x): CDF of an entry conditioned on |X| < 1.
    pub fn continuous_cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if self.nodes.is_empty() {
            return if x < 0.0 { 0.0 } else { 1.0 };
        }
        if x <= -1.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else if x <= 0.0 {
            self.lower_half_sum(x)
        } else {
            1.0 - self.lower_half_sum(-x)
        }
    }

    /// G_B′(x) on (−1, 1); zero outside.
    pub fn continuous_pdf(&self, x: f64) -> f64 {
        if !(x > -1.0 && x < 1.0) {
            return 0.0;
        }
        self.nodes
            .iter()
            .map(|n| n.weight * n.m * super::normal_pdf(n.m * x) / n.z)
            .sum()
    }

    /// F_X(x; B) = P[X ≤ x].
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let a = self.atom_mass();
        if x < -1.0 {
            0.0
        } else if x == -1.0 {
            a
        } else if x < 1.0 {
            a + self.continuous_mass() * self.continuous_cdf(x)
        } else {
            1.0
        }
    }

    /// P[X < x].
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x <= -1.0 {
            0.0
        } else if x > 1.0 {
            1.0
        } else if x == 1.0 {
            1.0 - self.atom_mass()
        } else {
            self.cdf(x)
        }
    }

    /// F_X⁻¹(p) for p strictly between the two atoms.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        let a = self.atom_mass();
        if p.is_nan() {
            return Err(Error::domain("quantile of NaN"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
        }
        if p <= a {
            return Err(Error::domain(format!(
                "p = {p} falls in the atom at -1 (F(-1) = 1/(2B) = {a}, B = {})",
                self.block_size
            )));
        }
        if p >= 1.0 - a {
            return Err(Error::domain(format!(
                "p = {p} falls in the atom at +1 (F(1-) = 1 - 1/(2B) = {}, B = {})",
                1.0 - a,
                self.block_size
            )));
        }
        let t = (p - a) / self.continuous_mass();
        self.continuous_quantile(t)
    }

    /// G_B⁻¹(t) for t in (0, 1), by bracketed Newton iteration.
    pub fn continuous_quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) || self.nodes.is_empty() {
            return Err(Error::domain(format!(
                "continuous quantile needs 0 < t < 1 and B >= 2, got t = {t}, B = {}",
                self.block_size
            )));
        }
        if t == 0.5 {
            return Ok(0.0);
        }
        if t > 0.5 {
            return Ok(-self.lower_half_quantile(1.0 - t)?);
        }
        self.lower_half_quantile(t)
    }

    fn lower_half_quantile(&self, t: f64) -> Result<f64> {
        let (mut lo, mut hi) = (-1.0_f64, 0.0_f64);
        let mut x = self.approx_continuous_quantile(t).clamp(-1.0, 0.0);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let f = self.lower_half_sum(x) - t;
            if f == 0.0 {
                return Ok(x);
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let slope = self.continuous_pdf(x);
            let mut next = x - f / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x).abs();
            x = next;
            if step <= self.settings.root_tol * 1e-3
                || hi - lo <= f64::EPSILON * hi.abs().max(1e-300)
            {
                return Ok(x);
            }
        }
        Err(Error::Root(format!(
            "G_B inverse at t = {t} did not converge (B = {}, bracket [{lo}, {hi}])",
            self.block_size
        )))
    }

    /// Ψ(x·m₀; m₀, 1): the continuous part with M fixed at its median.
    pub fn approx_continuous_cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let m0 = self.median_absmax;
        trunc_normal_cdf_unchecked(x * m0, m0, libm::erf(m0 * FRAC_1_SQRT_2))
    }

    fn approx_continuous_quantile(&self, t: f64) -> f64 {
        let m0 = self.median_absmax;
        let lo = super::normal_cdf(-m0);
        let z = libm::erf(m0 * FRAC_1_SQRT_2);
        match normal_quantile(lo + t * z) {
            Ok(q) => q / m0,
            Err(_) => 0.0,
        }
    }

    /// F_X with G_B replaced by the fixed-median approximation.
    pub fn approx_cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let a = self.atom_mass();
        if x < -1.0 {
            0.0
        } else if x == -1.0 {
            a
        } else if x < 1.0 {
            a + self.continuous_mass() * self.approx_continuous_cdf(x)
        } else {
            1.0
        }
    }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_nan() {
        return Err(Error::domain("CDF evaluated at NaN"));
    }
    Ok(())
}

/// F_X(x; B) with default quadrature settings.
pub fn fx_cdf(x: f64, block_size: usize) -> Result<f64> {
    check_x(x)?;
    Ok(ScaledMaxDistribution::new(block_size)?.cdf(x))
}

/// F_X⁻¹(p; B) with default quadrature settings.
pub fn fx_quantile(p: f64, block_size: usize) -> Result<f64> {
    ScaledMaxDistribution::new(block_size)?.quantile(p)
}

/// Closed-form approximation of F_X(x; B) with M fixed at its median.
pub fn fx_cdf_approx(x: f64, block_size: usize) -> Result<f64> {
    check_x(x)?;
    check_block_size(block_size, 1)?;
    let a = 0.5 / block_size as f64;
    Ok(if x < -1.0 {
        0.0
    } else if x == -1.0 {
        a
    } else if x < 1.0 {
        let m0 = absmax_quantile_unchecked(0.5, block_size);
        let z = libm::erf(m0 * FRAC_1_SQRT_2);
        a + (1.0 - 2.0 * a) * trunc_normal_cdf_unchecked(x * m0, m0, z)
    } else {
        1.0
    })
}
