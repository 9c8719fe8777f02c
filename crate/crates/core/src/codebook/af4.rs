//! AbnormalFloat-4: the code whose interior values are medians of their
//! nearest-value regions under F_X(·; B), with −1, 0 and 1 held fixed.
//!
//! The stationarity condition F(a_j) − F(m_{j−1}) = F(m_j) − F(a_j), with
//! m_j the midpoint of a_j and a_{j+1}, determines a_{j+1} from the two
//! previous values. Each half of the code is then a boundary-value problem
//! solved by shooting on the value next to the fixed left endpoint.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::{Code16, CodeKind, Params, CODE_LEN};
use crate::distributions::ScaledMaxDistribution;
use crate::error::{Error, Result};
use crate::quadrature::QuadratureSettings;

#[derive(Debug, Clone)]
pub struct Af4Options {
    /// Seeds sampled over the open interval before bracketing.
    pub scan_points: usize,
    /// Bisection stops once |endpoint − target| is below this.
    pub shoot_tol: f64,
    /// Largest accepted median-condition residual, in probability.
    pub mass_tol: f64,
    pub settings: QuadratureSettings,
    /// Checked between shooting evaluations; set to abort the construction.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for Af4Options {
    fn default() -> Self {
        Self {
            scan_points: 64,
            shoot_tol: 1e-9,
            mass_tol: 1e-6,
            settings: QuadratureSettings {
                abs_tol: 1e-10,
                root_tol: 1e-12,
                ..Default::default()
            },
            cancel: None,
        }
    }
}

/// Applies the stationarity recurrence under one fixed distribution.
#[derive(Debug, Clone, Copy)]
pub struct StationarityStepper<'a> {
    dist: &'a ScaledMaxDistribution,
}

impl<'a> StationarityStepper<'a> {
    pub fn new(dist: &'a ScaledMaxDistribution) -> Self {
        Self { dist }
    }

    /// a_{j+1} = 2·F⁻¹(ρ) − a_j with ρ = 2F(a_j) − F((a_{j−1} + a_j)/2).
    ///
    /// `step` is reported in the escaped-support error so callers can tell
    /// how far a trajectory got.
    pub fn step(&self, a_prev: f64, a_cur: f64, step: usize) -> Result<f64> {
        if !(a_prev < a_cur) {
            return Err(Error::domain(format!(
                "stationarity step needs a_prev < a_cur, got {a_prev} and {a_cur}"
            )));
        }
        let mid = 0.5 * (a_prev + a_cur);
        if !(mid > -1.0 && a_cur < 1.0) {
            return Err(Error::domain(format!(
                "stationarity step needs -1 < (a_prev + a_cur)/2 and a_cur < 1, got {a_prev}, {a_cur}"
            )));
        }
        let f = |x: f64| self.dist.cdf(x);
        let rho = 2.0 * f(a_cur) - f(mid);
        let limit = 1.0 - self.dist.atom_mass();
        if rho >= limit {
            return Err(Error::EscapedSupport {
                index: step,
                rho,
                limit,
            });
        }
        Ok(2.0 * self.dist.quantile(rho)? - a_cur)
    }

    /// Starting from `(first, seed)`, applies `steps` recurrence steps and
    /// returns all `steps + 2` values.
    pub fn trajectory(&self, first: f64, seed: f64, steps: usize) -> Result<Vec<f64>> {
        let mut a = Vec::with_capacity(steps + 2);
        a.push(first);
        a.push(seed);
        for s in 0..steps {
            let next = self.step(a[s], a[s + 1], s + 1)?;
            a.push(next);
        }
        Ok(a)
    }
}

/// One step of the recurrence for `F_X(·; B)`.
pub fn stationarity_step(a_prev: f64, a_cur: f64, block_size: usize) -> Result<f64> {
    let dist = ScaledMaxDistribution::new(block_size)?;
    StationarityStepper::new(&dist).step(a_prev, a_cur, 1)
}

/// Endpoint miss for one seed; `None` when the trajectory ran into the
/// atom at +1, which counts as overshooting.
struct Shot {
    residual: Option<f64>,
    values: Vec<f64>,
}

impl Shot {
    fn signed(&self) -> f64 {
        self.residual.unwrap_or(f64::INFINITY)
    }
}

struct Shooter<'a> {
    stepper: StationarityStepper<'a>,
    first: f64,
    target: f64,
    steps: usize,
    cancel: Option<&'a AtomicBool>,
}

impl Shooter<'_> {
    fn shoot(&self, seed: f64) -> Result<Shot> {
        if self.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(Error::Cancelled);
        }
        let overshoot = Shot {
            residual: None,
            values: Vec::new(),
        };
        let mut values = Vec::with_capacity(self.steps + 2);
        values.push(self.first);
        values.push(seed);
        for s in 0..self.steps {
            let (prev, cur) = (values[s], values[s + 1]);
            // Past +1 the remaining steps are undefined; the seed was too large.
            if cur >= 1.0 {
                return Ok(overshoot);
            }
            match self.stepper.step(prev, cur, s + 1) {
                Ok(next) => values.push(next),
                Err(Error::EscapedSupport { .. }) => return Ok(overshoot),
                Err(e) => return Err(e),
            }
        }
        Ok(Shot {
            residual: Some(values[values.len() - 1] - self.target),
            values,
        })
    }

    fn monotone(&self, values: &[f64]) -> bool {
        let n = values.len();
        values.windows(2).all(|w| w[0] < w[1])
            && values[1..n - 1]
                .iter()
                .all(|&v| v > self.first && v < self.target)
    }

    /// Bisects a sign change down to `tol` in endpoint units.
    fn refine(&self, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, Shot)> {
        let mut best: Option<(f64, Shot)> = None;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let shot = self.shoot(mid)?;
            let r = shot.signed();
            if r < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            let done = r.abs() < tol;
            let better = best
                .as_ref()
                .is_none_or(|(_, b)| r.abs() < b.signed().abs());
            if better {
                best = Some((mid, shot));
            }
            if done || !(lo < 0.5 * (lo + hi) && 0.5 * (lo + hi) < hi) {
                break;
            }
        }
        let (seed, shot) = best.expect("at least one bisection step");
        if !(shot.signed().abs() < tol) {
            return Err(Error::Construction(format!(
                "shooting from {} toward {} stalled at seed {seed} with endpoint residual {:e}",
                self.first,
                self.target,
                shot.signed()
            )));
        }
        Ok((seed, shot))
    }

    fn solve(&self, scan_points: usize, tol: f64) -> Result<(f64, Vec<f64>, f64)> {
        let width = self.target - self.first;
        let seeds: Vec<f64> = (1..=scan_points)
            .map(|i| self.first + width * i as f64 / (scan_points + 1) as f64)
            .collect();
        let residuals = seeds
            .iter()
            .map(|&s| self.shoot(s).map(|shot| shot.signed()))
            .collect::<Result<Vec<f64>>>()?;

        let mut solutions = Vec::new();
        let mut brackets = Vec::new();
        for i in 0..seeds.len() - 1 {
            let (r0, r1) = (residuals[i], residuals[i + 1]);
            if r0 == 0.0 {
                let shot = self.shoot(seeds[i])?;
                brackets.push((seeds[i], seeds[i]));
                if self.monotone(&shot.values) {
                    solutions.push((seeds[i], shot));
                }
                continue;
            }
            if (r0 < 0.0) == (r1 < 0.0) {
                continue;
            }
            let (lo, hi) = if r0 < 0.0 {
                (seeds[i], seeds[i + 1])
            } else {
                (seeds[i + 1], seeds[i])
            };
            brackets.push((seeds[i], seeds[i + 1]));
            let (seed, shot) = self.refine(lo, hi, tol)?;
            if self.monotone(&shot.values) {
                solutions.push((seed, shot));
            }
        }

        match solutions.len() {
            0 => Err(Error::Construction(format!(
                "no monotone solution from {} toward {}: scanned {} seeds over ({}, {}), residuals in [{:e}, {:e}], sign-change brackets {:?}",
                self.first,
                self.target,
                scan_points,
                seeds[0],
                seeds[seeds.len() - 1],
                residuals.iter().cloned().fold(f64::INFINITY, f64::min),
                residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                brackets
            ))),
            1 => {
                let (seed, shot) = solutions.pop().unwrap();
                let r = shot.signed();
                Ok((seed, shot.values, r))
            }
            n => Err(Error::Construction(format!(
                "{n} monotone shooting solutions from {} toward {}; brackets {:?}",
                self.first, self.target, brackets
            ))),
        }
    }
}

/// AF4 for block size `B` with default options.
pub fn af4_code(block_size: usize) -> Result<Code16> {
    af4_code_with(block_size, &Af4Options::default())
}

pub fn af4_code_with(block_size: usize, options: &Af4Options) -> Result<Code16> {
    if block_size < 2 {
        return Err(Error::domain(format!(
            "AF4 needs block size >= 2, got {block_size}"
        )));
    }
    if options.scan_points < 2 {
        return Err(Error::domain("AF4 seed scan needs at least 2 points"));
    }
    let dist = ScaledMaxDistribution::with_settings(block_size, options.settings)?;
    let stepper = StationarityStepper::new(&dist);
    let cancel = options.cancel.as_deref();

    // a1 = −1 with seed a2, six steps to a8 = 0.
    let negative = Shooter {
        stepper,
        first: -1.0,
        target: 0.0,
        steps: 6,
        cancel,
    };
    // a8 = 0 with seed a9, seven steps to a16 = 1.
    let positive = Shooter {
        stepper,
        first: 0.0,
        target: 1.0,
        steps: 7,
        cancel,
    };
    let (seed_neg, neg, res_neg) = negative.solve(options.scan_points, options.shoot_tol)?;
    let (seed_pos, pos, res_pos) = positive.solve(options.scan_points, options.shoot_tol)?;

    let mut values = [0.0; CODE_LEN];
    values[..7].copy_from_slice(&neg[..7]);
    values[7] = 0.0;
    values[8..15].copy_from_slice(&pos[1..8]);
    values[15] = 1.0;

    let code = Code16::new(values, CodeKind::Af4, Some(block_size), Params::new())?;
    let residuals = code.median_residuals(&dist);
    let (worst_index, worst) = residuals
        .iter()
        .map(|&(j, r)| (j, r.abs()))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if worst > options.mass_tol {
        return Err(Error::Construction(format!(
            "median condition residual {worst:e} at a{} exceeds {:e}",
            worst_index + 1,
            options.mass_tol
        )));
    }

    let mut params = Params::new();
    params.insert("seed_a2".into(), seed_neg.into());
    params.insert("seed_a9".into(), seed_pos.into());
    params.insert("endpoint_residual_a8".into(), res_neg.into());
    params.insert("endpoint_residual_a16".into(), res_pos.into());
    params.insert("max_mass_residual".into(), worst.into());
    params.insert("shoot_tol".into(), options.shoot_tol.into());
    params.insert("mass_tol".into(), options.mass_tol.into());
    params.insert("scan_points".into(), options.scan_points.into());
    Ok(code.with_params(params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_step_from_zero() {
        let d = ScaledMaxDistribution::new(64).unwrap();
        let s = StationarityStepper::new(&d);
        for a in [0.05, 0.2, 0.4] {
            let next = s.step(-a, 0.0, 1).unwrap();
            assert!((next - a).abs() < 1e-9, "{a}: {next}");
        }
    }

    #[test]
    fn step_satisfies_median_condition() {
        let d = ScaledMaxDistribution::new(64).unwrap();
        let s = StationarityStepper::new(&d);
        let (prev, cur) = (-1.0, -0.7);
        let next = s.step(prev, cur, 1).unwrap();
        assert!(next > cur);
        let left = d.cdf(cur) - d.cdf(0.5 * (prev + cur));
        let right = d.cdf(0.5 * (cur + next)) - d.cdf(cur);
        assert!((left - right).abs() < 1e-9);
    }

    #[test]
    fn step_matches_bisection_on_median_condition() {
        // independent route: bisect the right-hand mass directly in a_next
        let d = ScaledMaxDistribution::new(64).unwrap();
        let (prev, cur) = (-1.0, -0.7);
        let left = d.cdf(cur) - d.cdf(0.5 * (prev + cur));
        let (mut lo, mut hi) = (cur, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let right = d.cdf(0.5 * (cur + mid)) - d.cdf(cur);
            if right < left {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let next = stationarity_step(prev, cur, 64).unwrap();
        assert!((next - 0.5 * (lo + hi)).abs() < 1e-9, "{next} vs {lo}");
    }

    #[test]
    fn step_errors() {
        let d = ScaledMaxDistribution::new(64).unwrap();
        let s = StationarityStepper::new(&d);
        assert!(matches!(s.step(0.2, 0.1, 1), Err(Error::Domain(_))));
        assert!(matches!(
            s.step(0.9, 0.999, 3),
            Err(Error::EscapedSupport { index: 3, .. })
        ));
    }

    #[test]
    fn cancellation_is_honored() {
        let flag = Arc::new(AtomicBool::new(true));
        let opts = Af4Options {
            cancel: Some(flag),
            ..Default::default()
        };
        assert!(matches!(af4_code_with(64, &opts), Err(Error::Cancelled)));
    }

    #[test]
    fn af4_64_is_stationary() {
        let code = af4_code(64).unwrap();
        let d = ScaledMaxDistribution::new(64).unwrap();
        for (j, r) in code.median_residuals(&d) {
            assert!(r.abs() < 1e-6, "a{}: {r}", j + 1);
        }
        assert_eq!(code.block_size(), Some(64));
        assert!(code.params().contains_key("seed_a2"));
    }

    #[test]
    fn matches_reference_codes() {
        // Frozen from an independent scipy shooting solution (brentq on
        // the endpoint residual, F evaluated with adaptive quadrature).
        let reference: [(usize, [f64; 16]); 2] = [
            (
                64,
                [
                    -1.0,
                    -0.7101467140372836,
                    -0.5348233971342157,
                    -0.40106562868945894,
                    -0.2881266616831254,
                    -0.1868168823910048,
                    -0.09195361428374244,
                    0.0,
                    0.08033040564895692,
                    0.16258617941389109,
                    0.24900108146418792,
                    0.342563862670987,
                    0.4478749122166645,
                    0.5732073011592203,
                    0.7369697084164242,
                    1.0,
                ],
            ),
            (
                4096,
                [
                    -1.0,
                    -0.5518999428807214,
                    -0.40151274848650487,
                    -0.2972107526873896,
                    -0.21220443561282487,
                    -0.13715497098057278,
                    -0.06740522872811508,
                    0.0,
                    0.058815094035632544,
                    0.11917357834197312,
                    0.18291502461400927,
                    0.2526356015166102,
                    0.3326821102093938,
                    0.4320045854811891,
                    0.5764417896953384,
                    1.0,
                ],
            ),
        ];
        for (b, want) in reference {
            let code = af4_code(b).unwrap();
            for (j, (&got, &w)) in code.values().iter().zip(&want).enumerate() {
                assert!((got - w).abs() < 1e-8, "B={b} a{}: {got} vs {w}", j + 1);
            }
        }
    }
}
