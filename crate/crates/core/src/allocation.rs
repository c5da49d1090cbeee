//! Feedback-bit allocation across the paths of one user.
//!
//! Quantizing a path phase with `B` bits leaves a uniform error on `±π/2^B`.
//! Its first moment gives the compensation factor `η(B) = (2^B/π)·sin(π/2^B)`
//! and the per-path normalized MMSE is `1 − η(B)²`. Linear interpolation of
//! that curve between integers is convex and strictly decreasing, so greedy
//! marginal analysis (one bit at a time to the path with the largest weighted
//! decrease) is optimal for a fixed total budget.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Largest bit count for which `2^B` is exact in the arithmetic used here.
pub const MAX_BITS: u32 = 62;

/// Maximum number of allocations `allocate_bruteforce` will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;

/// Relative slack under which two marginal gains count as a tie.
const TIE_RTOL: f64 = 1e-12;

/// `sin(x)/x` and `1 − sin(x)/x`, the latter without cancellation for small x.
fn sinc_parts(x: f64) -> (f64, f64) {
    if x < 1e-2 {
        let x2 = x * x;
        let one_minus = x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0));
        (1.0 - one_minus, one_minus)
    } else {
        let s = x.sin() / x;
        (s, 1.0 - s)
    }
}

fn half_angle(bits: u32) -> f64 {
    PI / (1u64 << bits.min(MAX_BITS)) as f64
}

/// Phase-quantization compensation factor `(2^B/π)·sin(π/2^B)`.
///
/// `η(0) = 0`; bit counts above [`MAX_BITS`] are clamped.
pub fn eta(bits: u32) -> f64 {
    if bits == 0 {
        // sin(π) is 1.2e-16 in floating point, not zero
        return 0.0;
    }
    sinc_parts(half_angle(bits)).0
}

/// Normalized MMSE of one path, `1 − η(B)²`.
pub fn nmmse(bits: u32) -> f64 {
    if bits == 0 {
        return 1.0;
    }
    let (s, one_minus) = sinc_parts(half_angle(bits));
    one_minus * (1.0 + s)
}

/// Piecewise-linear interpolation of [`nmmse`] between adjacent integers.
pub fn nmmse_pl(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("x"));
    }
    if x < 0.0 {
        return Err(Error::invalid("x", "must be nonnegative"));
    }
    let lo = x.floor();
    if lo >= MAX_BITS as f64 {
        return Ok(nmmse(MAX_BITS));
    }
    let t = x - lo;
    let b = lo as u32;
    if t == 0.0 {
        return Ok(nmmse(b));
    }
    Ok((1.0 - t) * nmmse(b) + t * nmmse(b + 1))
}

/// Weighted sum `Σ w_ℓ·nmmse(B_ℓ)` over paths.
pub fn weighted_nmmse(weights: &[f64], bits: &[u32]) -> f64 {
    weights.iter().zip(bits).map(|(&w, &b)| w * nmmse(b)).sum()
}

/// Reconstruction MSE `Σ_ℓ N·β_ℓ²·(1 − η(B_ℓ)²)` of the MMSE estimate.
pub fn theoretical_weighted_mse(betas: &[f64], bits: &[u32], num_antennas: usize) -> Result<f64> {
    if betas.len() != bits.len() {
        return Err(Error::LengthMismatch { expected: betas.len(), got: bits.len() });
    }
    Ok(betas.iter().zip(bits).map(|(&b, &k)| num_antennas as f64 * b * b * nmmse(k)).sum())
}

/// Per-path weights `β_ℓ²` and a total bit budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    weights: Vec<f64>,
    budget: u32,
}

impl AllocationProblem {
    pub fn new(weights: Vec<f64>, budget: u32) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("allocation needs at least one weight"));
        }
        for &w in &weights {
            if !w.is_finite() {
                return Err(Error::NonFinite("weights"));
            }
            if w < 0.0 {
                return Err(Error::invalid("weights", "must be nonnegative"));
            }
        }
        Ok(Self { weights, budget })
    }

    /// Weights taken from path amplitudes, `w_ℓ = β_ℓ²`.
    pub fn from_gains(gains: &[f64], budget: u32) -> Result<Self> {
        Self::new(gains.iter().map(|g| g * g).collect(), budget)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn num_paths(&self) -> usize {
        self.weights.len()
    }

    fn finish(&self, bits: Vec<u32>) -> Allocation {
        let objective = weighted_nmmse(&self.weights, &bits);
        Allocation { bits, objective }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub bits: Vec<u32>,
    /// `Σ_ℓ w_ℓ·nmmse(B_ℓ)`.
    pub objective: f64,
}

impl Allocation {
    pub fn total(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }
}

/// Greedy marginal analysis: starting from zero bits, each of the `budget`
/// steps grants one bit to the path with the largest weighted decrease
/// `w_ℓ·(f(B_ℓ) − f(B_ℓ+1))`. Near-ties go to the lowest path index.
pub fn allocate_greedy(p: &AllocationProblem) -> Allocation {
    let l = p.num_paths();
    let mut bits = vec![0u32; l];
    let gain = |w: f64, b: u32| w * (nmmse(b) - nmmse(b + 1));
    for _ in 0..p.budget {
        let mut best = 0;
        let mut best_gain = gain(p.weights[0], bits[0]);
        for (i, (&w, &b)) in p.weights.iter().zip(&bits).enumerate().skip(1) {
            let g = gain(w, b);
            if g > best_gain + TIE_RTOL * best_gain.abs() {
                best = i;
                best_gain = g;
            }
        }
        bits[best] += 1;
    }
    p.finish(bits)
}

/// Same number of bits on every path; the remainder goes one bit each to the
/// lowest-index paths.
pub fn allocate_uniform(p: &AllocationProblem) -> Allocation {
    let l = p.num_paths() as u32;
    let base = p.budget / l;
    let extra = p.budget % l;
    let bits = (0..l).map(|i| base + u32::from(i < extra)).collect();
    p.finish(bits)
}

/// Number of compositions of `budget` into `parts` nonnegative parts,
/// `C(budget + parts − 1, parts − 1)`, saturating.
pub fn composition_count(budget: u32, parts: usize) -> u128 {
    let k = parts.saturating_sub(1) as u128;
    let n = budget as u128 + k;
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Exhaustive search over all compositions of the budget. Returns the first
/// minimizer in lexicographic order.
pub fn allocate_bruteforce(p: &AllocationProblem) -> Result<Allocation> {
    let size = composition_count(p.budget, p.num_paths());
    if size > BRUTEFORCE_LIMIT {
        return Err(Error::EnumerationTooLarge { size, limit: BRUTEFORCE_LIMIT });
    }
    let l = p.num_paths();
    let mut current = vec![0u32; l];
    let mut best: Option<(f64, Vec<u32>)> = None;
    enumerate(&mut current, 0, p.budget, &mut |bits| {
        let obj = weighted_nmmse(&p.weights, bits);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, bits.to_vec()));
        }
    });
    let (_, bits) = best.expect("at least one composition");
    Ok(p.finish(bits))
}

fn enumerate(current: &mut [u32], pos: usize, remaining: u32, visit: &mut impl FnMut(&[u32])) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        visit(current);
        return;
    }
    for b in 0..=remaining {
        current[pos] = b;
        enumerate(current, pos + 1, remaining - b, visit);
    }
    current[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eta_values() {
        assert!((eta(1) - 2.0 / PI).abs() < 1e-15);
        assert!((eta(2) - 0.900_316_316_157_106_1).abs() < 1e-15);
        assert!(eta(16) > 1.0 - 1e-8);
        assert_eq!(eta(0), 0.0);
        for b in 0..40 {
            assert!(eta(b + 1) > eta(b) || eta(b) == 1.0);
        }
    }

    #[test]
    fn nmmse_values() {
        assert_eq!(nmmse(0), 1.0);
        assert!((nmmse(1) - 0.594_715_265_430_648_9).abs() < 1e-15);
        assert!((nmmse(3) - 0.050_358_796_448_216_28).abs() < 1e-15);
        for b in 0..MAX_BITS {
            assert!((nmmse(b) - (1.0 - eta(b).powi(2))).abs() < 1e-15);
        }
        assert!(nmmse(30) > 0.0 && nmmse(30) < 1e-17);
    }

    #[test]
    fn interpolation_values() {
        assert_eq!(nmmse_pl(2.0).unwrap(), nmmse(2));
        assert!((nmmse_pl(0.5).unwrap() - 0.797_357_632_715_324_4).abs() < 1e-15);
        assert!((nmmse_pl(1.25).unwrap() - 0.493_394_081_788_311_1).abs() < 1e-15);
        assert!(nmmse_pl(-0.1).is_err());
        assert!(nmmse_pl(f64::NAN).is_err());
    }

    #[test]
    fn greedy_examples() {
        let p = AllocationProblem::new(vec![1.0, 0.25, 0.0625], 3).unwrap();
        let a = allocate_greedy(&p);
        assert_eq!(a.bits, vec![3, 0, 0]);
        assert!((a.objective - 0.362_858_796_448_216_3).abs() < 1e-14);

        let p = AllocationProblem::new(vec![1.0, 1.0], 2).unwrap();
        let a = allocate_greedy(&p);
        assert_eq!(a.bits, vec![2, 0]);
        let even = weighted_nmmse(&[1.0, 1.0], &[1, 1]);
        assert!((a.objective - even).abs() < 1e-14);

        let p = AllocationProblem::new(vec![0.3, 0.2, 0.5], 0).unwrap();
        let a = allocate_greedy(&p);
        assert_eq!(a.bits, vec![0, 0, 0]);
        assert!((a.objective - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bruteforce_examples() {
        let p = AllocationProblem::new(vec![1.0, 0.25, 0.0625], 3).unwrap();
        let a = allocate_bruteforce(&p).unwrap();
        assert!((a.objective - 0.362_858_796_448_216_3).abs() < 1e-14);
        let p = AllocationProblem::new(vec![0.7], 9).unwrap();
        assert_eq!(allocate_bruteforce(&p).unwrap().bits, vec![9]);
    }

    #[test]
    fn bruteforce_guard() {
        let p = AllocationProblem::new(vec![1.0; 12], 60).unwrap();
        assert!(matches!(allocate_bruteforce(&p), Err(Error::EnumerationTooLarge { .. })));
        assert_eq!(composition_count(3, 3), 10);
        assert_eq!(composition_count(12, 4), 455);
        assert_eq!(composition_count(5, 1), 1);
    }

    #[test]
    fn uniform_split() {
        let p = AllocationProblem::new(vec![1.0, 1.0, 1.0], 7).unwrap();
        assert_eq!(allocate_uniform(&p).bits, vec![3, 2, 2]);
    }

    #[test]
    fn theoretical_mse_examples() {
        let v = theoretical_weighted_mse(&[1.0], &[1], 4).unwrap();
        assert!((v - 2.378_861_061_722_595_6).abs() < 1e-13);
        assert_eq!(theoretical_weighted_mse(&[1.0, 1.0], &[0, 0], 8).unwrap(), 16.0);
        assert!(theoretical_weighted_mse(&[1.0, 2.0], &[40, 40], 64).unwrap() < 1e-20);
        assert!(theoretical_weighted_mse(&[1.0], &[1, 2], 4).is_err());
    }

    #[test]
    fn problem_validation() {
        assert!(AllocationProblem::new(vec![], 3).is_err());
        assert!(AllocationProblem::new(vec![-1.0], 3).is_err());
        assert!(AllocationProblem::new(vec![f64::NAN], 3).is_err());
    }

    proptest! {
        #[test]
        fn greedy_spends_whole_budget(
            weights in prop::collection::vec(0.0f64..10.0, 1..6),
            budget in 0u32..40,
        ) {
            let p = AllocationProblem::new(weights, budget).unwrap();
            prop_assert_eq!(allocate_greedy(&p).total(), budget as u64);
        }

        #[test]
        fn heavier_paths_get_no_fewer_bits(
            weights in prop::collection::vec(0.001f64..10.0, 2..6),
            budget in 0u32..30,
        ) {
            let p = AllocationProblem::new(weights.clone(), budget).unwrap();
            let a = allocate_greedy(&p);
            for i in 0..weights.len() {
                for j in 0..weights.len() {
                    if weights[i] > weights[j] * (1.0 + 1e-9) || (weights[i] == weights[j] && i < j) {
                        prop_assert!(a.bits[i] >= a.bits[j], "{:?} {:?}", weights, a.bits);
                    }
                }
            }
        }

        #[test]
        fn objective_non_increasing_in_budget(
            weights in prop::collection::vec(0.0f64..10.0, 1..5),
            budget in 0u32..30,
        ) {
            let a = allocate_greedy(&AllocationProblem::new(weights.clone(), budget).unwrap());
            let b = allocate_greedy(&AllocationProblem::new(weights, budget + 1).unwrap());
            prop_assert!(b.objective <= a.objective + 1e-15);
            // greedy path: the larger budget extends the smaller one by one bit
            let diff: Vec<i64> = a.bits.iter().zip(&b.bits).map(|(&x, &y)| y as i64 - x as i64).collect();
            prop_assert_eq!(diff.iter().sum::<i64>(), 1);
            prop_assert!(diff.iter().all(|&d| d >= 0));
        }
    }
}
