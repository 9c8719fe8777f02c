//! Reproducible sampling from the generative process and the estimators
//! used to check the analytic distributions against it.
//!
//! Block `k` of a run with seed `s` draws its normals from ChaCha8 keyed by
//! `s` on stream `k`, so every block can be regenerated on its own and
//! results do not depend on how blocks are spread over threads.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::blockquant::{quantize_block, UsageHistogram};
use crate::codebook::{Code16, CODE_LEN};
use crate::distributions::{normal_quantile, ScaledMaxDistribution};
use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub seed: u64,
    pub block_size: usize,
    pub num_blocks: usize,
    /// Blocks handed to one worker at a time.
    pub chunk_size: usize,
}

impl McConfig {
    pub fn new(seed: u64, block_size: usize, num_blocks: usize) -> Result<Self> {
        let cfg = Self {
            seed,
            block_size,
            num_blocks,
            chunk_size: DEFAULT_CHUNK_SIZE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::domain("block size must be >= 1"));
        }
        if self.num_blocks == 0 {
            return Err(Error::domain("number of blocks must be >= 1"));
        }
        if self.chunk_size == 0 {
            return Err(Error::domain("chunk size must be >= 1"));
        }
        Ok(())
    }
}

/// Uniform in (0, 1) from the top 53 bits, offset by half a step so that
/// neither endpoint occurs.
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Writes the standard normals Z₁…Z_B of block `index` into `out`.
pub fn block_normals(seed: u64, index: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    for z in out.iter_mut() {
        *z = normal_quantile(open_uniform(&mut rng)).expect("uniform in (0, 1)");
    }
}

/// Writes X_i = Z_i / max|Z| for block `index` into `out`. The first
/// element of largest magnitude becomes exactly ±1.
pub fn block_samples(seed: u64, index: u64, out: &mut [f64]) {
    block_normals(seed, index, out);
    let mut arg = 0;
    for (i, z) in out.iter().enumerate() {
        if z.abs() > out[arg].abs() {
            arg = i;
        }
    }
    let m = out[arg].abs();
    for z in out.iter_mut() {
        *z /= m;
    }
    out[arg] = out[arg].signum();
}

/// Runs `f` over every block in chunk-sized batches and merges the chunk
/// accumulators in chunk order.
pub fn fold_blocks<A, I, F, M>(cfg: &McConfig, init: I, f: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64, &[f64]) + Sync,
    M: Fn(A, A) -> A,
{
    cfg.validate()?;
    let chunks = cfg.num_blocks.div_ceil(cfg.chunk_size);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let mut buf = vec![0.0; cfg.block_size];
            let start = c * cfg.chunk_size;
            let end = (start + cfg.chunk_size).min(cfg.num_blocks);
            for k in start..end {
                block_samples(cfg.seed, k as u64, &mut buf);
                f(&mut acc, k as u64, &buf);
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(init(), merge))
}

/// Materialized samples, `num_blocks × B` values in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub config: McConfig,
    pub values: Vec<f64>,
}

impl SampleBatch {
    pub fn block(&self, k: usize) -> &[f64] {
        let b = self.config.block_size;
        &self.values[k * b..(k + 1) * b]
    }

    pub fn num_blocks(&self) -> usize {
        self.config.num_blocks
    }

    pub fn empirical_cdf(&self, x: f64, mode: SampleMode) -> Estimate {
        let b = self.config.block_size;
        let hits = match mode {
            SampleMode::IndependentOnly => {
                self.values.iter().step_by(b).filter(|&&v| v <= x).count()
            }
            SampleMode::AllSamples => self.values.iter().filter(|&&v| v <= x).count(),
        };
        Estimate::proportion(hits as u64, mode.retained(self.config))
    }
}

pub fn sample_blocks(cfg: &McConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let b = cfg.block_size;
    let n = cfg
        .num_blocks
        .checked_mul(b)
        .ok_or_else(|| Error::domain("sample count overflows"))?;
    let mut values = vec![0.0; n];
    values
        .par_chunks_mut(b)
        .enumerate()
        .for_each(|(k, out)| block_samples(cfg.seed, k as u64, out));
    Ok(SampleBatch {
        config: *cfg,
        values,
    })
}

/// Which samples of each block enter an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleMode {
    /// Only position 0 of each block, so retained samples are independent
    /// and binomial standard errors apply.
    IndependentOnly,
    /// Every sample; within-block dependence makes the reported standard
    /// error optimistic.
    AllSamples,
}

impl SampleMode {
    pub fn label(&self) -> &'static str {
        match self {
            SampleMode::IndependentOnly => "independent",
            SampleMode::AllSamples => "all_samples",
        }
    }

    fn retained(&self, cfg: McConfig) -> u64 {
        match self {
            SampleMode::IndependentOnly => cfg.num_blocks as u64,
            SampleMode::AllSamples => (cfg.num_blocks * cfg.block_size) as u64,
        }
    }
}

/// A proportion estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn proportion(hits: u64, n: u64) -> Self {
        let p = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        Self {
            estimate: p,
            stderr: binomial_stderr(p, n),
            n,
        }
    }

    /// Sample mean with standard error s/√n from running sums.
    pub fn mean(sum: f64, sum_sq: f64, n: u64) -> Self {
        if n == 0 {
            return Self {
                estimate: 0.0,
                stderr: 0.0,
                n,
            };
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            estimate: mean,
            stderr: (var / nf).sqrt(),
            n,
        }
    }

    /// |estimate − target| ≤ k standard errors.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.stderr
    }
}

pub fn binomial_stderr(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// z·sqrt(p(1 − p)/n); 1.96 gives a 95% interval.
pub fn ci_halfwidth(p: f64, n: u64, z: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("confidence interval needs n >= 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(z * binomial_stderr(p, n))
}

/// P[X ≤ x] for each `x`, streamed without storing samples.
pub fn estimate_cdf(cfg: &McConfig, xs: &[f64], mode: SampleMode) -> Result<Vec<Estimate>> {
    let counts = fold_blocks(
        cfg,
        || vec![0u64; xs.len()],
        |acc, _, block| {
            let retained = match mode {
                SampleMode::IndependentOnly => &block[..1],
                SampleMode::AllSamples => block,
            };
            for &v in retained {
                for (c, &x) in acc.iter_mut().zip(xs) {
                    *c += u64::from(v <= x);
                }
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    )?;
    let n = mode.retained(*cfg);
    Ok(counts
        .into_iter()
        .map(|c| Estimate::proportion(c, n))
        .collect())
}

/// Mean of min_j |X − q_j| over the position-0 sample of each block.
pub fn estimate_l1(code: &Code16, cfg: &McConfig) -> Result<Estimate> {
    let q = code.values();
    let (sum, sum_sq) = fold_blocks(
        cfg,
        || (0.0, 0.0),
        |acc, _, block| {
            let x = block[0];
            let e = (q[code.nearest_index(x)] - x).abs();
            acc.0 += e;
            acc.1 += e * e;
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    Ok(Estimate::mean(sum, sum_sq, cfg.num_blocks as u64))
}

/// Usage of each code value when sampled blocks are quantized.
///
/// The normals are rounded to `f32` and quantized with the blockquant
/// routine, so this exercises the same path as tensor quantization.
pub fn estimate_usage(
    code: &Code16,
    block_size: usize,
    num_blocks: usize,
    seed: u64,
) -> Result<UsageHistogram> {
    Ok(usage_tally(code, block_size, num_blocks, seed)?.0)
}

/// Usage proportions with standard errors taken over blocks.
///
/// Entries of one block share their scale, so the per-block proportions
/// are the independent units; the binomial error over all entries would
/// be optimistic.
pub fn usage_estimates(
    code: &Code16,
    block_size: usize,
    num_blocks: usize,
    seed: u64,
) -> Result<[Estimate; CODE_LEN]> {
    let (hist, sum_sq) = usage_tally(code, block_size, num_blocks, seed)?;
    let b = block_size as f64;
    Ok(std::array::from_fn(|j| {
        let sum = hist.counts[j] as f64 / b;
        let spread = Estimate::mean(sum, sum_sq[j], num_blocks as u64);
        Estimate {
            estimate: hist.counts[j] as f64 / hist.total as f64,
            ..spread
        }
    }))
}

/// Pooled histogram plus, per value, the sum of squared per-block
/// proportions.
fn usage_tally(
    code: &Code16,
    block_size: usize,
    num_blocks: usize,
    seed: u64,
) -> Result<(UsageHistogram, [f64; CODE_LEN])> {
    let cfg = McConfig::new(seed, block_size, num_blocks)?;
    let chunks = cfg.num_blocks.div_ceil(cfg.chunk_size);
    let b = block_size as f64;
    let parts: Vec<(UsageHistogram, [f64; CODE_LEN])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut h = UsageHistogram::default();
            let mut sq = [0.0; CODE_LEN];
            let mut z = vec![0.0; block_size];
            let start = c * cfg.chunk_size;
            let end = (start + cfg.chunk_size).min(cfg.num_blocks);
            for k in start..end {
                block_normals(seed, k as u64, &mut z);
                let w: Vec<f32> = z.iter().map(|&v| v as f32).collect();
                let (_, idx) = quantize_block(&w, code);
                let mut counts = [0u32; CODE_LEN];
                for i in idx {
                    h.add(i);
                    counts[i as usize] += 1;
                }
                for (s, &n) in sq.iter_mut().zip(&counts) {
                    let p = n as f64 / b;
                    *s += p * p;
                }
            }
            (h, sq)
        })
        .collect();
    Ok(parts.iter().fold(
        (UsageHistogram::default(), [0.0; CODE_LEN]),
        |(mut h, mut sq), (ph, psq)| {
            h.merge(ph);
            sq.iter_mut().zip(psq).for_each(|(a, b)| *a += b);
            (h, sq)
        },
    ))
}

/// Kolmogorov–Smirnov distance between the position-0 samples and F_X on
/// (−1, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub n: u64,
    /// Asymptotic 99% critical value 1.6276/√n.
    pub critical_99: f64,
}

pub fn ks_statistic(cfg: &McConfig, dist: &ScaledMaxDistribution) -> Result<KsResult> {
    if dist.block_size() != cfg.block_size {
        return Err(Error::domain(format!(
            "distribution block size {} differs from sampling block size {}",
            dist.block_size(),
            cfg.block_size
        )));
    }
    let mut xs = fold_blocks(
        cfg,
        Vec::new,
        |acc, _, block| acc.push(block[0]),
        |mut a, mut b| {
            a.append(&mut b);
            a
        },
    )?;
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let x = xs[i];
        let mut j = i;
        while j < n && xs[j] == x {
            j += 1;
        }
        // ECDF jumps from i/n to j/n at x
        if x > -1.0 && x < 1.0 {
            let f = dist.cdf(x);
            let f_left = dist.cdf_left(x);
            d = d.max((j as f64 / n as f64 - f).abs());
            d = d.max((i as f64 / n as f64 - f_left).abs());
        }
        i = j;
    }
    Ok(KsResult {
        statistic: d,
        n: n as u64,
        critical_99: 1.6276 / (n as f64).sqrt(),
    })
}

/// Frequencies of X = −1 and X = +1 at position 0 of each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomFrequencies {
    pub minus_one: Estimate,
    pub plus_one: Estimate,
}

pub fn atom_frequencies(cfg: &McConfig) -> Result<AtomFrequencies> {
    let (lo, hi) = fold_blocks(
        cfg,
        || (0u64, 0u64),
        |acc, _, block| {
            acc.0 += u64::from(block[0] == -1.0);
            acc.1 += u64::from(block[0] == 1.0);
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    let n = cfg.num_blocks as u64;
    Ok(AtomFrequencies {
        minus_one: Estimate::proportion(lo, n),
        plus_one: Estimate::proportion(hi, n),
    })
}

/// Within-block dependence: X₁ and X₂ are never both +1, although each is
/// +1 with probability 1/(2B).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceWitness {
    pub both_plus_one: u64,
    pub first_plus_one: Estimate,
}

pub fn dependence_witness(cfg: &McConfig) -> Result<DependenceWitness> {
    if cfg.block_size < 2 {
        return Err(Error::domain("dependence witness needs block size >= 2"));
    }
    let (both, first) = fold_blocks(
        cfg,
        || (0u64, 0u64),
        |acc, _, block| {
            acc.0 += u64::from(block[0] == 1.0 && block[1] == 1.0);
            acc.1 += u64::from(block[0] == 1.0);
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    Ok(DependenceWitness {
        both_plus_one: both,
        first_plus_one: Estimate::proportion(first, cfg.num_blocks as u64),
    })
}

pub const CSV_HEADER: &str = "quantity,B,n,estimate,stderr,analytic,abs_diff";

/// One estimate in the report format shared by the validation commands.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub quantity: String,
    pub block_size: usize,
    pub n: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub analytic: Option<f64>,
}

impl CsvRow {
    pub fn new(
        quantity: impl Into<String>,
        block_size: usize,
        est: Estimate,
        analytic: Option<f64>,
    ) -> Self {
        Self {
            quantity: quantity.into(),
            block_size,
            n: est.n,
            estimate: est.estimate,
            stderr: est.stderr,
            analytic,
        }
    }

    pub fn abs_diff(&self) -> Option<f64> {
        self.analytic.map(|a| (self.estimate - a).abs())
    }

    /// True when an analytic value exists and lies more than `k` standard
    /// errors away.
    pub fn exceeds(&self, k: f64) -> bool {
        self.abs_diff().is_some_and(|d| d > k * self.stderr)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.10}"));
        format!(
            "{},{},{},{:.10},{:.10},{},{}",
            self.quantity,
            self.block_size,
            self.n,
            self.estimate,
            self.stderr,
            opt(self.analytic),
            opt(self.abs_diff())
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_reproducible_in_isolation() {
        let cfg = McConfig {
            chunk_size: 3,
            ..McConfig::new(42, 16, 10).unwrap()
        };
        let batch = sample_blocks(&cfg).unwrap();
        let mut buf = vec![0.0; 16];
        block_samples(42, 7, &mut buf);
        assert_eq!(batch.block(7), &buf[..]);
        let other = sample_blocks(&McConfig {
            chunk_size: 1,
            ..cfg
        })
        .unwrap();
        assert_eq!(batch.values, other.values);
        block_samples(43, 7, &mut buf);
        assert_ne!(batch.block(7), &buf[..]);
    }

    #[test]
    fn one_extreme_per_block() {
        let batch = sample_blocks(&McConfig::new(1, 32, 500).unwrap()).unwrap();
        for k in 0..batch.num_blocks() {
            let b = batch.block(k);
            assert_eq!(b.iter().filter(|v| v.abs() == 1.0).count(), 1);
            assert!(b.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn block_size_one_gives_signs() {
        let cfg = McConfig::new(3, 1, 20000).unwrap();
        let batch = sample_blocks(&cfg).unwrap();
        assert!(batch.values.iter().all(|v| v.abs() == 1.0));
        let atoms = atom_frequencies(&cfg).unwrap();
        assert!(atoms.plus_one.within(0.5, 4.0));
    }

    #[test]
    fn ecdf_support_and_symmetry() {
        let cfg = McConfig::new(5, 16, 20000).unwrap();
        let batch = sample_blocks(&cfg).unwrap();
        assert_eq!(
            batch.empirical_cdf(1.0, SampleMode::AllSamples).estimate,
            1.0
        );
        let e = batch.empirical_cdf(0.0, SampleMode::IndependentOnly);
        assert!(e.within(0.5, 4.0), "{e:?}");
        let streamed = estimate_cdf(&cfg, &[0.0, 1.0], SampleMode::IndependentOnly).unwrap();
        assert_eq!(streamed[0], e);
        assert_eq!(streamed[1].estimate, 1.0);
    }

    #[test]
    fn ci_halfwidth_values() {
        assert!((ci_halfwidth(0.5, 10_000, 1.96).unwrap() - 0.0098).abs() < 1e-12);
        let w = ci_halfwidth(0.8728, 1 << 30, 1.96).unwrap();
        assert!((w - 2.0e-5).abs() < 0.05e-5, "{w}");
        assert_eq!(ci_halfwidth(0.0, 5, 1.96).unwrap(), 0.0);
        assert_eq!(ci_halfwidth(1.0, 5, 1.96).unwrap(), 0.0);
        assert!(ci_halfwidth(0.5, 0, 1.96).is_err());
    }

    #[test]
    fn dependence_witness_never_fires() {
        let cfg = McConfig::new(9, 8, 40000).unwrap();
        let w = dependence_witness(&cfg).unwrap();
        assert_eq!(w.both_plus_one, 0);
        assert!(w.first_plus_one.within(1.0 / 16.0, 4.0));
    }

    #[test]
    fn mean_estimate() {
        let e = Estimate::mean(6.0, 14.0, 3);
        assert_eq!(e.estimate, 2.0);
        assert!((e.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn l1_estimate_tracks_expected_l1() {
        use crate::codebook::{expected_l1, nf4_code, Nf4Variant};
        let code = nf4_code(Nf4Variant::QuantileOfAverage);
        let cfg = McConfig::new(17, 64, 1 << 16).unwrap();
        let e = estimate_l1(&code, &cfg).unwrap();
        let a = expected_l1(&code, 64).unwrap();
        assert!(e.within(a, 4.0), "{e:?} vs {a}");
    }

    #[test]
    fn usage_estimates_pool_counts_and_cluster_errors() {
        use crate::codebook::{nf4_code, Nf4Variant};
        let code = nf4_code(Nf4Variant::QuantileOfAverage);
        let hist = estimate_usage(&code, 64, 3000, 2).unwrap();
        let est = usage_estimates(&code, 64, 3000, 2).unwrap();
        let props = hist.proportions();
        for j in 0..CODE_LEN {
            assert_eq!(est[j].estimate, props[j]);
            assert_eq!(est[j].n, 3000);
            // Shared scales inflate the spread beyond independent draws.
            let naive = binomial_stderr(props[j], hist.total);
            assert!(
                est[j].stderr > 0.8 * naive,
                "{j}: {} vs {naive}",
                est[j].stderr
            );
        }
        let total: f64 = est.iter().map(|e| e.estimate).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_row_format() {
        let row = CsvRow::new("cdf(0.5)", 32, Estimate::proportion(3, 4), Some(0.7));
        assert_eq!(
            row.to_csv(),
            "cdf(0.5),32,4,0.7500000000,0.2165063509,0.7000000000,0.0500000000"
        );
        assert!(!row.exceeds(4.0));
        let none = CsvRow::new("x", 1, Estimate::proportion(1, 2), None);
        assert!(none.to_csv().ends_with(",,"));
    }
}
