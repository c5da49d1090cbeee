//! Downlink channel reconstruction at the base station.
//!
//! Given the path angles and gains (from uplink pilots) and the quantized
//! downlink phases, the conditional-mean estimate scales every path by the
//! compensation factor `η(B_ℓ)`:
//!
//! ```text
//! ĥ = Σ_ℓ η(B_ℓ)·β_ℓ·exp(j q_ℓ)·a(θ_ℓ, λ_DL)
//! Φ = Σ_ℓ β_ℓ²·(1 − η(B_ℓ)²)·a(θ_ℓ) a(θ_ℓ)ᴴ
//! ```

use crate::allocation::{eta, nmmse};
use crate::channel::{steering, ArrayGeometry, PathSet};
use crate::feedback::{dft_codebook_feedback, FeedbackPlan};
use crate::linalg::outer;
use crate::{CMatrix, CVector, Complex64, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReconstructionMode {
    Mmse,
    NoFeedbackUnitPhase,
    DftBaseline,
}

impl ReconstructionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReconstructionMode::Mmse => "mmse",
            ReconstructionMode::NoFeedbackUnitPhase => "no_feedback",
            ReconstructionMode::DftBaseline => "dft",
        }
    }
}

/// Error covariance stored as a weighted sum of outer products
/// `Σ_i w_i·v_i v_iᴴ`. Materialize with [`ErrorCovariance::to_dense`].
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance {
    dim: usize,
    terms: Vec<(f64, CVector)>,
}

impl ErrorCovariance {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(f64, CVector)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(w, _)| *w == 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.terms.iter().map(|(w, v)| w * v.norm_squared()).sum()
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (w, v) in &self.terms {
            if *w != 0.0 {
                m += outer(v) * Complex64::new(*w, 0.0);
            }
        }
        m
    }

    /// `Φ x` without forming the matrix.
    pub fn apply(&self, x: &CVector) -> CVector {
        let mut y = CVector::zeros(self.dim);
        for (w, v) in &self.terms {
            y += v * (v.dotc(x) * *w);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedChannel {
    pub estimate: CVector,
    pub error_cov: ErrorCovariance,
    pub mode: ReconstructionMode,
}

impl ReconstructedChannel {
    /// Same estimate with the covariance dropped, for covariance-unaware
    /// precoders.
    pub fn without_covariance(&self) -> Self {
        Self { estimate: self.estimate.clone(), error_cov: ErrorCovariance::zero(self.estimate.len()), mode: self.mode }
    }
}

fn covariance_terms(ps: &PathSet, bits: &[u32], geom: &ArrayGeometry) -> ErrorCovariance {
    let terms = ps
        .paths()
        .iter()
        .zip(bits)
        .map(|(p, &b)| (p.gain * p.gain * nmmse(b), steering(p.aoa, geom.lambda_dl, geom)))
        .collect();
    ErrorCovariance { dim: geom.num_antennas, terms }
}

fn check_len(ps: &PathSet, len: usize) -> Result<()> {
    if ps.len() != len {
        return Err(Error::LengthMismatch { expected: ps.len(), got: len });
    }
    Ok(())
}

/// Conditional-mean downlink estimate from geometry and quantized phases.
///
/// `ps` may hold true or estimated angles/gains; the covariance is evaluated
/// with whatever parameters are supplied.
pub fn reconstruct_mmse(ps: &PathSet, fp: &FeedbackPlan, geom: &ArrayGeometry) -> Result<ReconstructedChannel> {
    check_len(ps, fp.bits.len())?;
    check_len(ps, fp.phases.len())?;
    let mut estimate = CVector::zeros(geom.num_antennas);
    for ((p, &b), q) in ps.paths().iter().zip(&fp.bits).zip(&fp.phases) {
        let e = eta(b);
        if e == 0.0 {
            continue;
        }
        let coef = Complex64::from_polar(e * p.gain, q.q);
        estimate += steering(p.aoa, geom.lambda_dl, geom) * coef;
    }
    Ok(ReconstructedChannel {
        estimate,
        error_cov: covariance_terms(ps, &fp.bits, geom),
        mode: ReconstructionMode::Mmse,
    })
}

/// How the no-feedback estimate reports its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoFeedbackCovariance {
    /// `Σ β²·a aᴴ`: every path phase fully unknown.
    Full,
    Zero,
}

/// Geometry-only estimate `Σ β_ℓ·a(θ_ℓ, λ_DL)` with unit path phases.
pub fn reconstruct_no_feedback(ps: &PathSet, geom: &ArrayGeometry, cov: NoFeedbackCovariance) -> ReconstructedChannel {
    let mut estimate = CVector::zeros(geom.num_antennas);
    for p in ps.paths() {
        estimate += steering(p.aoa, geom.lambda_dl, geom) * Complex64::new(p.gain, 0.0);
    }
    let error_cov = match cov {
        NoFeedbackCovariance::Full => covariance_terms(ps, &vec![0; ps.len()], geom),
        NoFeedbackCovariance::Zero => ErrorCovariance::zero(geom.num_antennas),
    };
    ReconstructedChannel { estimate, error_cov, mode: ReconstructionMode::NoFeedbackUnitPhase }
}

/// DFT-codebook baseline: the selected codeword scaled by the true channel
/// norm, with no covariance.
pub fn reconstruct_dft(h_true: &CVector, b_tot: u32, geom: &ArrayGeometry) -> Result<ReconstructedChannel> {
    let fb = dft_codebook_feedback(h_true, b_tot, geom)?;
    Ok(ReconstructedChannel {
        estimate: fb.estimate,
        error_cov: ErrorCovariance::zero(geom.num_antennas),
        mode: ReconstructionMode::DftBaseline,
    })
}

/// Dense `Σ_ℓ β_ℓ²·(1 − η(B_ℓ)²)·a(θ_ℓ)a(θ_ℓ)ᴴ`.
pub fn error_covariance(ps: &PathSet, bits: &[u32], geom: &ArrayGeometry) -> Result<CMatrix> {
    check_len(ps, bits.len())?;
    Ok(covariance_terms(ps, bits, geom).to_dense())
}

/// `Δ = h hᴴ − (ĥ ĥᴴ + Φ)` and `‖Δ‖_F²/N²`.
pub fn outer_product_error(h_true: &CVector, rc: &ReconstructedChannel) -> Result<(CMatrix, f64)> {
    let n = h_true.len();
    if rc.estimate.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: rc.estimate.len() });
    }
    let delta = outer(h_true) - outer(&rc.estimate) - rc.error_cov.to_dense();
    let norm = delta.norm_squared() / (n as f64 * n as f64);
    Ok((delta, norm))
}

/// `‖Δ‖_F²/N²` without forming any N×N matrix.
///
/// `Δ = W D Wᴴ` with `W = [h, ĥ, v_1, …]` and `D = diag(1, −1, −w_1, …)`, so
/// `‖Δ‖_F² = tr(D G D G)` with the small Gram matrix `G = WᴴW`.
pub fn outer_product_error_norm(h_true: &CVector, rc: &ReconstructedChannel) -> Result<f64> {
    let n = h_true.len();
    if rc.estimate.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: rc.estimate.len() });
    }
    let mut cols: Vec<&CVector> = vec![h_true, &rc.estimate];
    let mut d = vec![1.0, -1.0];
    for (w, v) in rc.error_cov.terms() {
        cols.push(v);
        d.push(-w);
    }
    let m = cols.len();
    let mut g = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = cols[i].dotc(cols[j]);
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += d[i] * d[j] * g[(i, j)].norm_sqr();
        }
    }
    Ok(acc.max(0.0) / (n as f64 * n as f64))
}

/// Large-array limit of `‖Δ‖_F²/N²` for the MMSE estimate, conditional on the
/// realized quantization errors `δ`:
///
/// `Σ_{ℓ<ℓ′} 2(1 + η_ℓ²η_ℓ′²)β_ℓ²β_ℓ′² − 4η_ℓη_ℓ′β_ℓ²β_ℓ′²·cos(δ_ℓ − δ_ℓ′)`
///
/// Each unordered pair appears once; the factor 2 accounts for the two
/// symmetric off-diagonal entries.
pub fn asymptotic_delta_norm(betas: &[f64], bits: &[u32], deltas: &[f64]) -> Result<f64> {
    if betas.len() != bits.len() {
        return Err(Error::LengthMismatch { expected: betas.len(), got: bits.len() });
    }
    if betas.len() != deltas.len() {
        return Err(Error::LengthMismatch { expected: betas.len(), got: deltas.len() });
    }
    let etas: Vec<f64> = bits.iter().map(|&b| eta(b)).collect();
    let mut acc = 0.0;
    for l in 0..betas.len() {
        for m in (l + 1)..betas.len() {
            let bb = (betas[l] * betas[m]).powi(2);
            let ee = etas[l] * etas[m];
            acc += 2.0 * (1.0 + ee * ee) * bb - 4.0 * ee * bb * (deltas[l] - deltas[m]).cos();
        }
    }
    Ok(acc)
}
