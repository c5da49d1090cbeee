//! Per-path phase feedback: uniform scalar quantization on the circle, and a
//! conventional DFT-codebook feedback baseline.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::allocation::{eta, MAX_BITS};
use crate::channel::{ArrayGeometry, PathSet};
use crate::linalg::{wrap_to_2pi, wrap_to_pi};
use crate::{CVector, Complex64, Error, Result};

/// Uniform phase codebook `{2π j / 2^B, j = 0..2^B−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCodebook {
    bits: u32,
}

impl PhaseCodebook {
    pub fn new(bits: u32) -> Result<Self> {
        if bits > MAX_BITS {
            return Err(Error::invalid("bits", format!("at most {MAX_BITS}")));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn size(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 * PI / self.size() as f64
    }

    pub fn codeword(&self, index: u64) -> f64 {
        index as f64 * self.step()
    }

    /// All codewords. Only sensible for small `bits`.
    pub fn codewords(&self) -> Vec<f64> {
        (0..self.size()).map(|j| self.codeword(j)).collect()
    }
}

/// Result of quantizing one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedPhase {
    pub bits: u32,
    /// Reconstructed codeword in `[0, 2π)`.
    pub q: f64,
    pub index: u64,
    /// `wrap(angle − q)`, within `±π/2^B`.
    pub delta: f64,
}

/// Nearest codeword under circular distance.
///
/// Bit counts above 62 are clamped to 62.
pub fn quantize_phase(angle: f64, bits: u32) -> QuantizedPhase {
    let bits = bits.min(MAX_BITS);
    let cb = PhaseCodebook { bits };
    let a = wrap_to_2pi(angle);
    let step = cb.step();
    let k = (a / step).round();
    let delta = wrap_to_pi(a - k * step);
    let index = (k as u64) % cb.size();
    QuantizedPhase { bits, q: cb.codeword(index), index, delta }
}

/// Half-width of the quantization error support, `π/2^B`.
pub fn feedback_error_bound(bits: u32) -> f64 {
    PI / (1u64 << bits.min(MAX_BITS)) as f64
}

/// Bit counts and quantized phases for every path of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPlan {
    pub bits: Vec<u32>,
    pub phases: Vec<QuantizedPhase>,
}

impl FeedbackPlan {
    /// Quantizes each path's downlink phase with its allotted bits.
    pub fn quantize(ps: &PathSet, bits: &[u32], lambda_dl: f64) -> Result<Self> {
        if bits.len() != ps.len() {
            return Err(Error::LengthMismatch { expected: ps.len(), got: bits.len() });
        }
        let phases = ps.paths().iter().zip(bits).map(|(p, &b)| quantize_phase(p.dl_phase(lambda_dl), b)).collect();
        Ok(Self { bits: bits.to_vec(), phases })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn total_bits(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    /// Compensation factors `η(B_ℓ)`.
    pub fn compensation(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| eta(b)).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.delta).collect()
    }
}

/// Outcome of DFT-codebook feedback for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct DftFeedback {
    pub index: u64,
    pub codebook_size: u64,
    /// Unit-norm selected codeword.
    pub codeword: CVector,
    /// `‖h‖·c`, assuming the channel norm is known at the transmitter.
    pub estimate: CVector,
}

// Above this size the exhaustive FFT search is replaced by a coarse FFT plus a
// local fine search around the coarse peak.
const DFT_EXHAUSTIVE_LIMIT: u64 = 1 << 14;

/// Column `m` of the oversampled DFT codebook of size `size` (≥ N): unit norm,
/// entries `exp(−j2π n m/size)/√N`.
pub fn dft_codeword(n_ant: usize, size: u64, m: u64) -> CVector {
    let scale = 1.0 / (n_ant as f64).sqrt();
    CVector::from_iterator(
        n_ant,
        (0..n_ant).map(|n| {
            let ph = -2.0 * PI * ((n as u128 * m as u128) % size as u128) as f64 / size as f64;
            Complex64::from_polar(scale, ph)
        }),
    )
}

/// `|cᴴh|` for every column of an oversampled DFT of size `size` via a
/// zero-padded inverse FFT.
fn dft_correlations(h: &CVector, size: usize) -> Vec<f64> {
    let len = size.max(h.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (i, z) in h.iter().enumerate() {
        buf[i % len] += z;
    }
    let mut planner = FftPlanner::new();
    // cᴴh = Σ_n exp(+j2π nm/size) h_n / √N: an unnormalized inverse transform
    planner.plan_fft_inverse(buf.len()).process(&mut buf);
    buf.iter().map(|z| z.norm()).collect()
}

/// Selects the DFT codeword with the largest `|cᴴh|` among `2^B_tot` columns.
///
/// With `2^B_tot ≥ N` the codebook is an `N`-antenna DFT oversampled by
/// `2^B_tot/N`; with fewer columns it is a uniform subsample of the critically
/// sampled DFT.
pub fn dft_codebook_feedback(h: &CVector, b_tot: u32, geom: &ArrayGeometry) -> Result<DftFeedback> {
    if h.is_empty() {
        return Err(Error::EmptyInput("channel vector"));
    }
    if h.len() != geom.num_antennas {
        return Err(Error::LengthMismatch { expected: geom.num_antennas, got: h.len() });
    }
    if b_tot > MAX_BITS {
        return Err(Error::invalid("b_tot", format!("at most {MAX_BITS}")));
    }
    let n = h.len();
    let m_total = 1u64 << b_tot;

    // (codebook size used for synthesis, DFT column, reported index)
    let (size, column, index) = if m_total < n as u64 {
        // subsample the N-point DFT: column j ↦ floor(j·N/M)
        let corr = dft_correlations(h, n);
        let best = (0..m_total)
            .map(|j| (j, corr[(j * n as u64 / m_total) as usize]))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        (n as u64, best.0 * n as u64 / m_total, best.0)
    } else if m_total <= DFT_EXHAUSTIVE_LIMIT.max(n as u64) {
        let corr = dft_correlations(h, m_total as usize);
        let m = argmax(&corr) as u64;
        (m_total, m, m)
    } else {
        let coarse = DFT_EXHAUSTIVE_LIMIT.max(n as u64);
        let corr = dft_correlations(h, coarse as usize);
        let c = argmax(&corr) as u64;
        let stride = m_total / coarse;
        let centre = c * stride;
        let mut best = (centre, f64::NEG_INFINITY);
        for off in 0..=2 * stride {
            let m = (centre + m_total - stride + off) % m_total;
            let v = dft_codeword(n, m_total, m).dotc(h).norm();
            if v > best.1 {
                best = (m, v);
            }
        }
        (m_total, best.0, best.0)
    };

    let codeword = dft_codeword(n, size, column);
    let estimate = &codeword * Complex64::new(h.norm(), 0.0);
    Ok(DftFeedback { index, codebook_size: m_total, codeword, estimate })
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0
}
