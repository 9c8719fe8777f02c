//! Property tests across the distribution, codebook, quantizer and sampler.

use std::sync::OnceLock;

use proptest::prelude::*;
use quantlab::blockquant::{
    dequantize, qtensor_read, qtensor_write, quantize, quantize_block, tensor_read, tensor_write,
    Tensor,
};
use quantlab::codebook::{
    af4_code, balanced_code_for_block, balanced_code_with_endpoints, expected_l1, nf4_code, Code16,
    Nf4Variant, CODE_LEN,
};
use quantlab::distributions::ScaledMaxDistribution;
use quantlab::montecarlo::{estimate_cdf, usage_estimates, McConfig, SampleMode};

const BLOCK_SIZES: [usize; 6] = [16, 32, 64, 256, 1024, 4096];

fn af4_codes() -> &'static Vec<Code16> {
    static CODES: OnceLock<Vec<Code16>> = OnceLock::new();
    CODES.get_or_init(|| BLOCK_SIZES.iter().map(|&b| af4_code(b).unwrap()).collect())
}

fn dists() -> &'static Vec<ScaledMaxDistribution> {
    static DISTS: OnceLock<Vec<ScaledMaxDistribution>> = OnceLock::new();
    DISTS.get_or_init(|| {
        BLOCK_SIZES
            .iter()
            .map(|&b| ScaledMaxDistribution::new(b).unwrap())
            .collect()
    })
}

/// Exhaustive argmin with ties to the lower index.
fn oracle_index(code: &Code16, y: f64) -> usize {
    let mut best = 0;
    for j in 1..CODE_LEN {
        if (code.values()[j] - y).abs() < (code.values()[best] - y).abs() {
            best = j;
        }
    }
    best
}

fn oracle_block(block: &[f32], code: &Code16) -> (f32, Vec<u8>) {
    let m = block.iter().map(|v| v.abs()).fold(0.0f32, f32::max);
    let idx = block
        .iter()
        .map(|&w| {
            let y = if m == 0.0 { 0.0 } else { f64::from(w / m) };
            oracle_index(code, y) as u8
        })
        .collect();
    (m, idx)
}

fn arb_code() -> impl Strategy<Value = Code16> {
    prop::collection::btree_set(-999_999i32..=999_999, 14).prop_map(|inner| {
        let mut v = [0.0; CODE_LEN];
        v[0] = -1.0;
        v[15] = 1.0;
        for (slot, k) in v[1..15].iter_mut().zip(inner) {
            *slot = k as f64 / 1e6;
        }
        Code16::custom(v).unwrap()
    })
}

fn arb_named_code() -> impl Strategy<Value = Code16> {
    prop_oneof![
        Just(nf4_code(Nf4Variant::QuantileOfAverage)),
        (0..BLOCK_SIZES.len()).prop_map(|i| af4_codes()[i].clone()),
        arb_code(),
    ]
}

fn arb_block() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(
        prop_oneof![
            8 => -4.0f32..4.0,
            1 => Just(0.0f32),
            1 => Just(-0.0f32),
            1 => (-3i32..=3).prop_map(|k| k as f32 * 0.5),
        ],
        1..300,
    )
}

#[test]
fn af4_codes_hold_their_invariants() {
    for (code, dist) in af4_codes().iter().zip(dists()) {
        let b = dist.block_size();
        let q = code.values();
        assert_eq!((q[0], q[7], q[15]), (-1.0, 0.0, 1.0), "B = {b}");
        assert!(q.windows(2).all(|w| w[0] < w[1]), "B = {b}");
        for (j, r) in code.median_residuals(dist) {
            assert!(r.abs() < 1e-6, "B = {b}, index {j}: residual {r}");
        }
        let usage = code.usage_probabilities(dist);
        assert!((usage.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(usage.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn af4_interior_contracts_as_blocks_grow() {
    for pair in af4_codes().windows(2) {
        let (small, large) = (pair[0].values(), pair[1].values());
        for j in (1..15).filter(|&j| j != 7) {
            assert!(large[j].abs() < small[j].abs(), "index {j}");
        }
    }
}

#[test]
fn balanced_codes_split_mass_evenly() {
    for dist in dists() {
        let b = dist.block_size();
        let code = balanced_code_for_block(b).unwrap();
        for (j, p) in code.usage_probabilities(dist).into_iter().enumerate() {
            assert!((p - 1.0 / 16.0).abs() < 1e-7, "B = {b}, q{}: {p}", j + 1);
        }
        let ends = balanced_code_with_endpoints(b).unwrap();
        let q = ends.values();
        assert_eq!((q[0], q[7], q[15]), (-1.0, 0.0, 1.0), "B = {b}");
    }
}

#[test]
fn af4_has_lowest_expected_l1_of_the_codes() {
    let nf4 = nf4_code(Nf4Variant::QuantileOfAverage);
    for (code, &b) in af4_codes().iter().zip(&BLOCK_SIZES) {
        let a = expected_l1(code, b).unwrap();
        assert!(a <= expected_l1(&nf4, b).unwrap(), "B = {b}");
        let ends = balanced_code_with_endpoints(b).unwrap();
        assert!(a <= expected_l1(&ends, b).unwrap(), "B = {b}");
    }
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let cfg = McConfig {
        chunk_size: 100,
        ..McConfig::new(21, 32, 5000).unwrap()
    };
    let xs = [-0.5, 0.0, 0.25, 0.9];
    let code = &af4_codes()[2];
    let tensor = Tensor::new(
        vec![40, 96],
        (0..40 * 96)
            .map(|i| ((i * 7919) % 211) as f32 - 105.0)
            .collect(),
    )
    .unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let cdf = estimate_cdf(&cfg, &xs, SampleMode::AllSamples).unwrap();
            let usage = usage_estimates(code, 64, 300, 4).unwrap();
            let qt = quantize(&tensor, code, 32, 0).unwrap();
            (cdf, usage, qt)
        })
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn nearest_index_is_the_argmin(code in arb_code(), y in -1.5f64..1.5) {
        prop_assert_eq!(code.nearest_index(y), oracle_index(&code, y));
    }

    #[test]
    fn nearest_index_on_midpoints_takes_lower(code in arb_named_code(), j in 0usize..15) {
        let q = code.values();
        let mid = 0.5 * (q[j] + q[j + 1]);
        prop_assert_eq!(code.nearest_index(mid), oracle_index(&code, mid));
        prop_assert_eq!(code.nearest_index(q[j]), j);
    }

    #[test]
    fn quantize_block_matches_oracle(block in arb_block(), code in arb_named_code()) {
        prop_assert_eq!(quantize_block(&block, &code), oracle_block(&block, &code));
    }

    #[test]
    fn dequantization_error_is_bounded(block in arb_block(), code in arb_named_code()) {
        let t = Tensor::new(vec![block.len()], block.clone()).unwrap();
        let qt = quantize(&t, &code, block.len(), 0).unwrap();
        let back = dequantize(&qt).unwrap();
        let m = f64::from(qt.scales()[0]);
        let bound = m * code.max_gap() / 2.0 * (1.0 + 1e-6) + 1e-30;
        for (&w, &r) in block.iter().zip(back.data()) {
            prop_assert!((f64::from(w) - f64::from(r)).abs() <= bound);
        }
    }

    #[test]
    fn cdf_is_monotone_and_symmetric(
        b in 2usize..5000,
        x in -1.2f64..1.2,
        dx in 0.0f64..0.3,
    ) {
        let dist = ScaledMaxDistribution::new(b).unwrap();
        let (lo, hi) = (dist.cdf(x), dist.cdf(x + dx));
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(lo <= hi + 1e-15);
        prop_assert!((dist.cdf(-x) - (1.0 - dist.cdf_left(x))).abs() < 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf(b in 2usize..5000, t in 0.001f64..0.999) {
        let dist = ScaledMaxDistribution::new(b).unwrap();
        let a = dist.atom_mass();
        let p = a + t * (1.0 - 2.0 * a);
        let x = dist.quantile(p).unwrap();
        prop_assert!(x > -1.0 && x < 1.0);
        prop_assert!((dist.cdf(x) - p).abs() < 1e-8, "p = {}, x = {}", p, x);
    }

    #[test]
    fn strided_blocks_match_contiguous_ones(
        rows in 1usize..6,
        cols in 1usize..6,
        block in 1usize..8,
        seed in 0u32..1000,
    ) {
        let data: Vec<f32> = (0..rows * cols)
            .map(|i| ((i as u32).wrapping_mul(2_654_435_761) ^ seed) as f32 / u32::MAX as f32 - 0.5)
            .collect();
        let code = nf4_code(Nf4Variant::QuantileOfAverage);
        let t = Tensor::new(vec![rows, cols], data.clone()).unwrap();
        // Blocking along axis 0 equals blocking the transpose along axis 1.
        let transposed: Vec<f32> = (0..cols * rows)
            .map(|k| data[(k % rows) * cols + k / rows])
            .collect();
        let tt = Tensor::new(vec![cols, rows], transposed).unwrap();
        let a = dequantize(&quantize(&t, &code, block, 0).unwrap()).unwrap();
        let b = dequantize(&quantize(&tt, &code, block, 1).unwrap()).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(a.data()[r * cols + c], b.data()[c * rows + r]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn files_round_trip_bit_exactly(
        dims in prop::collection::vec(1usize..7, 1..4),
        seed in any::<u32>(),
        block in 1usize..9,
        code in arb_named_code(),
    ) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|i| f32::from_bits((i as u32).wrapping_mul(0x9E37_79B9) ^ seed))
            .map(|v| if v.is_finite() { v } else { -0.0 })
            .collect();
        let t = Tensor::new(dims.clone(), data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.fqt"), dir.path().join("b.fqt"));
        tensor_write(&t, &p1).unwrap();
        let back = tensor_read(&p1).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        let same_bits = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same_bits);
        tensor_write(&back, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let axis = dims.len() - 1;
        let qt = quantize(&t, &code, block, axis).unwrap();
        let (q1, q2) = (dir.path().join("a.fqz"), dir.path().join("b.fqz"));
        qtensor_write(&qt, &q1).unwrap();
        let qback = qtensor_read(&q1).unwrap();
        prop_assert_eq!(qback.dims(), qt.dims());
        prop_assert_eq!(qback.scales(), qt.scales());
        prop_assert_eq!(qback.packed(), qt.packed());
        qtensor_write(&qback, &q2).unwrap();
        prop_assert_eq!(std::fs::read(&q1).unwrap(), std::fs::read(&q2).unwrap());
        let (d1, d2) = (dequantize(&qt).unwrap(), dequantize(&qback).unwrap());
        let same = d1.data().iter().zip(d2.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}
