//! Multi-user downlink precoding from reconstructed CSI.
//!
//! The precoders of all `K` users are stacked into one unit-norm vector
//! `f ∈ C^{NK}`. With `R_k = ĥ_kĥ_kᴴ + Φ_k`, the sum-SE lower bound is
//! `log₂ Π_k (fᴴA_k f)/(fᴴB_k f)` where
//!
//! ```text
//! A_k = I_K ⊗ R_k + (σ_k²/P)·I_{NK}
//! B_k = A_k − e_k e_kᵀ ⊗ R_k
//! ```
//!
//! Both are block diagonal, so every operation here works on `K` blocks of
//! size `N×N` rather than on `NK×NK` matrices.

use log::debug;

use crate::linalg::{cholesky, norm_sqr, outer, principal_eigenvector, quad_form};
use crate::reconstruction::ReconstructedChannel;
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Reconstructed CSI of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCsi {
    pub estimate: CVector,
    /// Hermitian PSD error covariance.
    pub error_cov: CMatrix,
    /// Receiver noise power σ_k², watts.
    pub noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct PrecodingProblem {
    users: Vec<UserCsi>,
    power: f64,
    num_antennas: usize,
    // R_k
    signal_cov: Vec<CMatrix>,
    // R_k·P/σ_k²; the SINR-relevant quantities are invariant to this scaling
    // and it keeps every quadratic form O(SNR) instead of O(path loss).
    scaled_cov: Vec<CMatrix>,
}

impl PrecodingProblem {
    pub fn new(users: Vec<UserCsi>, power: f64) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::EmptyInput("precoding needs at least one user"));
        }
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::invalid("power", "must be finite and positive"));
        }
        let n = users[0].estimate.len();
        if n == 0 {
            return Err(Error::EmptyInput("channel estimate"));
        }
        for u in &users {
            if u.estimate.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: u.estimate.len() });
            }
            if u.error_cov.nrows() != n || u.error_cov.ncols() != n {
                return Err(Error::LengthMismatch { expected: n, got: u.error_cov.nrows() });
            }
            if !(u.noise_var.is_finite() && u.noise_var > 0.0) {
                return Err(Error::invalid("noise_var", "must be finite and positive"));
            }
            if u.estimate.iter().any(|z| !z.is_finite()) || u.error_cov.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFinite("user CSI"));
            }
            let scale = u.error_cov.norm().max(1e-300);
            if (&u.error_cov - u.error_cov.adjoint()).norm() > 1e-10 * scale {
                return Err(Error::invalid("error_cov", "must be Hermitian"));
            }
        }
        let signal_cov: Vec<CMatrix> = users.iter().map(|u| outer(&u.estimate) + &u.error_cov).collect();
        let scaled_cov =
            signal_cov.iter().zip(&users).map(|(r, u)| r * Complex64::new(power / u.noise_var, 0.0)).collect();
        Ok(Self { users, power, num_antennas: n, signal_cov, scaled_cov })
    }

    /// Builds a problem from reconstructions; the covariance of each is used
    /// as stored (call [`ReconstructedChannel::without_covariance`] first for a
    /// covariance-unaware design).
    pub fn from_reconstructions(rcs: &[ReconstructedChannel], noise_var: &[f64], power: f64) -> Result<Self> {
        if rcs.len() != noise_var.len() {
            return Err(Error::LengthMismatch { expected: rcs.len(), got: noise_var.len() });
        }
        let users = rcs
            .iter()
            .zip(noise_var)
            .map(|(rc, &s)| UserCsi { estimate: rc.estimate.clone(), error_cov: rc.error_cov.to_dense(), noise_var: s })
            .collect();
        Self::new(users, power)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn users(&self) -> &[UserCsi] {
        &self.users
    }

    /// `R_k = ĥ_kĥ_kᴴ + Φ_k`.
    pub fn signal_cov(&self, k: usize) -> &CMatrix {
        &self.signal_cov[k]
    }

    /// `σ_k²/P`.
    pub fn noise_ratio(&self, k: usize) -> f64 {
        self.users[k].noise_var / self.power
    }

    fn estimates(&self) -> Vec<CVector> {
        self.users.iter().map(|u| u.estimate.clone()).collect()
    }
}

/// Concatenated per-user precoders `[f_1; …; f_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderStack {
    f: CVector,
    num_antennas: usize,
    num_users: usize,
}

impl PrecoderStack {
    pub fn new(f: CVector, num_antennas: usize, num_users: usize) -> Result<Self> {
        if f.len() != num_antennas * num_users {
            return Err(Error::LengthMismatch { expected: num_antennas * num_users, got: f.len() });
        }
        Ok(Self { f, num_antennas, num_users })
    }

    pub fn from_blocks(blocks: &[CVector]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::EmptyInput("precoder blocks"));
        }
        let n = blocks[0].len();
        let mut f = CVector::zeros(n * blocks.len());
        for (k, b) in blocks.iter().enumerate() {
            if b.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: b.len() });
            }
            f.rows_mut(k * n, n).copy_from(b);
        }
        Self::new(f, n, blocks.len())
    }

    pub fn vector(&self) -> &CVector {
        &self.f
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    /// Precoder of user `k`.
    pub fn block(&self, k: usize) -> CVector {
        self.f.rows(k * self.num_antennas, self.num_antennas).into_owned()
    }

    pub fn blocks(&self) -> Vec<CVector> {
        (0..self.num_users).map(|k| self.block(k)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.f.norm()
    }

    /// Unit-norm copy. Fails on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.f.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("precoder", "cannot normalize a zero or non-finite vector"));
        }
        Ok(Self { f: &self.f / Complex64::new(n, 0.0), ..*self })
    }

    /// Returns a copy scaled by a complex constant.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self { f: &self.f * c, ..*self }
    }
}

/// Block-diagonal Hermitian matrix with `K` square blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: Vec<CMatrix>,
}

impl BlockDiagonal {
    pub fn apply(&self, x: &CVector) -> CVector {
        let n = self.blocks[0].nrows();
        let mut y = CVector::zeros(x.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let xk = x.rows(k * n, n);
            y.rows_mut(k * n, n).copy_from(&(b * xk));
        }
        y
    }

    pub fn quad_form(&self, x: &CVector) -> f64 {
        x.dotc(&self.apply(x)).re
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.blocks[0].nrows();
        let nk = n * self.blocks.len();
        let mut m = CMatrix::zeros(nk, nk);
        for (k, b) in self.blocks.iter().enumerate() {
            m.view_mut((k * n, k * n), (n, n)).copy_from(b);
        }
        m
    }
}

/// `(A_k, B_k)` in block form.
pub fn build_a_b(pp: &PrecodingProblem, k: usize) -> Result<(BlockDiagonal, BlockDiagonal)> {
    if k >= pp.num_users() {
        return Err(Error::invalid("k", format!("user index {k} out of range")));
    }
    let n = pp.num_antennas();
    let noise = CMatrix::identity(n, n) * Complex64::new(pp.noise_ratio(k), 0.0);
    let full = pp.signal_cov(k) + &noise;
    let a = BlockDiagonal { blocks: vec![full.clone(); pp.num_users()] };
    let mut b = a.clone();
    b.blocks[k] = noise;
    Ok((a, b))
}

/// Scaled quadratic forms `(fᴴA_k f, fᴴB_k f)·P/σ_k²` for every user.
fn scaled_forms(pp: &PrecodingProblem, f: &PrecoderStack) -> Vec<(f64, f64)> {
    let blocks = f.blocks();
    let energy = norm_sqr(f.vector());
    (0..pp.num_users())
        .map(|k| {
            let r = &pp.scaled_cov[k];
            let mut total = 0.0;
            let mut own = 0.0;
            for (j, fj) in blocks.iter().enumerate() {
                let q = quad_form(r, fj).max(0.0);
                total += q;
                if j == k {
                    own = q;
                }
            }
            let a = total + energy;
            (a, a - own)
        })
        .collect()
}

fn check_dims(pp: &PrecodingProblem, f: &PrecoderStack) -> Result<()> {
    if f.num_antennas() != pp.num_antennas() || f.num_users() != pp.num_users() {
        return Err(Error::LengthMismatch { expected: pp.num_antennas() * pp.num_users(), got: f.vector().len() });
    }
    Ok(())
}

/// Sum-SE lower bound `Σ_k log₂(1 + f_kᴴR_k f_k / (Σ_{i≠k} f_iᴴR_k f_i + σ_k²/P))`,
/// evaluated with `f` as given (unit norm corresponds to full power).
pub fn sum_se_lower_bound(f: &PrecoderStack, pp: &PrecodingProblem) -> Result<f64> {
    check_dims(pp, f)?;
    Ok(scaled_forms(pp, f).iter().map(|(a, b)| (a / b).log2()).sum())
}

/// `γ(f) = Π_k (fᴴA_k f)/(fᴴB_k f)`; invariant to scaling of `f`.
pub fn gamma(f: &PrecoderStack, pp: &PrecodingProblem) -> Result<f64> {
    check_dims(pp, f)?;
    Ok(scaled_forms(pp, f).iter().map(|(a, b)| a / b).product())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpipConfig {
    /// Stop once the relative change of γ drops below this.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Return the best iterate seen instead of the last one.
    pub keep_best: bool,
}

impl Default for GpipConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_iter: 50, keep_best: true }
    }
}

impl GpipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be finite and positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GpipOutput {
    pub precoder: PrecoderStack,
    /// `log₂ γ` of the initial point followed by every iterate.
    pub se_trace: Vec<f64>,
    /// Number of fixed-point updates performed.
    pub iterations: usize,
    pub converged: bool,
}

impl GpipOutput {
    pub fn initial_se(&self) -> f64 {
        self.se_trace[0]
    }

    pub fn final_se(&self) -> f64 {
        *self.se_trace.last().expect("non-empty trace")
    }
}

/// Per-user dominant eigenvector of `R_k`, equal power. Used as a start point
/// when ZF on the estimates is undefined.
pub fn eigen_precoder(pp: &PrecodingProblem) -> Result<PrecoderStack> {
    let k = pp.num_users() as f64;
    let blocks: Vec<CVector> =
        (0..pp.num_users()).map(|i| principal_eigenvector(pp.signal_cov(i)) / Complex64::new(k.sqrt(), 0.0)).collect();
    PrecoderStack::from_blocks(&blocks)
}

/// Generalized power iteration: repeats `f ← B̄(f)⁻¹Ā(f)f`, `f ← f/‖f‖`.
///
/// Dividing `Ā` by `Π_k fᴴA_k f` and `B̄` by `Π_k fᴴB_k f` leaves the
/// normalized update unchanged, giving `Ā ∝ Σ_k A_k/(fᴴA_k f)` and
/// `B̄ ∝ Σ_k B_k/(fᴴB_k f)`. Both are block diagonal; block `j` of the latter is
/// `Σ_{k≠j} R_k/b_k + (Σ_k σ_k²/(P b_k))·I`, so the solve splits into `K`
/// Hermitian positive-definite `N×N` systems.
///
/// Starts from ZF on the estimates when `f0` is `None`, falling back to
/// [`eigen_precoder`] when the estimates are rank deficient.
pub fn gpip_solve(pp: &PrecodingProblem, cfg: &GpipConfig, f0: Option<&PrecoderStack>) -> Result<GpipOutput> {
    cfg.validate()?;
    let init = match f0 {
        Some(f) => {
            check_dims(pp, f)?;
            f.normalized()?
        }
        None => match zf_precoder(&pp.estimates()) {
            Ok(f) => f,
            Err(e) => {
                debug!("ZF start unavailable ({e}); using per-user eigenvectors");
                eigen_precoder(pp)?
            }
        },
    };

    let mut f = init;
    let mut forms = scaled_forms(pp, &f);
    let mut se: f64 = forms.iter().map(|(a, b)| (a / b).log2()).sum();
    if !se.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = vec![se];
    let mut best = (f.clone(), se);
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=cfg.max_iter {
        let next = gpip_step(pp, &f, &forms)?;
        let next_forms = scaled_forms(pp, &next);
        let next_se: f64 = next_forms.iter().map(|(a, b)| (a / b).log2()).sum();
        if !next_se.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: it });
        }
        iterations = it;
        trace.push(next_se);
        let rel = ((next_se - se) * std::f64::consts::LN_2).exp_m1().abs();
        if next_se > best.1 {
            best = (next.clone(), next_se);
        }
        f = next;
        forms = next_forms;
        se = next_se;
        if rel < cfg.epsilon {
            converged = true;
            break;
        }
    }

    let precoder = if cfg.keep_best { best.0 } else { f };
    Ok(GpipOutput { precoder, se_trace: trace, iterations, converged })
}

struct WeightedSums {
    sum_a: CMatrix,
    sum_b: CMatrix,
    ident_a: f64,
    ident_b: f64,
}

fn weighted_sums(pp: &PrecodingProblem, forms: &[(f64, f64)]) -> WeightedSums {
    let n = pp.num_antennas();
    let mut sum_a = CMatrix::zeros(n, n);
    let mut sum_b = CMatrix::zeros(n, n);
    let mut ident_a = 0.0;
    let mut ident_b = 0.0;
    for (r, &(a, b)) in pp.scaled_cov.iter().zip(forms) {
        sum_a += r * Complex64::new(1.0 / a, 0.0);
        sum_b += r * Complex64::new(1.0 / b, 0.0);
        ident_a += 1.0 / a;
        ident_b += 1.0 / b;
    }
    WeightedSums { sum_a, sum_b, ident_a, ident_b }
}

fn add_identity(m: &mut CMatrix, c: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += Complex64::new(c, 0.0);
    }
}

fn gpip_step(pp: &PrecodingProblem, f: &PrecoderStack, forms: &[(f64, f64)]) -> Result<PrecoderStack> {
    let ws = weighted_sums(pp, forms);
    let mut abar = ws.sum_a.clone();
    add_identity(&mut abar, ws.ident_a);
    let blocks = f
        .blocks()
        .iter()
        .enumerate()
        .map(|(j, fj)| {
            let mut bbar = &ws.sum_b - &pp.scaled_cov[j] * Complex64::new(1.0 / forms[j].1, 0.0);
            add_identity(&mut bbar, ws.ident_b);
            let rhs = &abar * fj;
            Ok(cholesky(bbar)?.solve(&rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    PrecoderStack::from_blocks(&blocks)?.normalized()
}

/// `‖Ā(f)f − γ(f)B̄(f)f‖ / ‖Ā(f)f‖`; zero exactly at stationary points.
pub fn stationarity_residual(f: &PrecoderStack, pp: &PrecodingProblem) -> Result<f64> {
    check_dims(pp, f)?;
    let forms = scaled_forms(pp, f);
    let ws = weighted_sums(pp, &forms);
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, fj) in f.blocks().iter().enumerate() {
        let af = &ws.sum_a * fj + fj * Complex64::new(ws.ident_a, 0.0);
        let bf = &ws.sum_b * fj - (&pp.scaled_cov[j] * fj) * Complex64::new(1.0 / forms[j].1, 0.0)
            + fj * Complex64::new(ws.ident_b, 0.0);
        num += norm_sqr(&(&af - bf));
        den += norm_sqr(&af);
    }
    Ok((num / den).sqrt())
}

/// Zero-forcing `Ĥ(ĤᴴĤ)⁻¹` with every column normalized to `1/√K`, so the
/// stack has unit norm and users get equal power.
pub fn zf_precoder(channels: &[CVector]) -> Result<PrecoderStack> {
    if channels.is_empty() {
        return Err(Error::EmptyInput("zero-forcing needs at least one channel"));
    }
    let n = channels[0].len();
    let k = channels.len();
    if k > n {
        return Err(Error::invalid("channels", format!("{k} users exceed {n} antennas")));
    }
    let h = CMatrix::from_columns(channels);
    let gram = h.adjoint() * &h;
    let max_diag = (0..k).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    if max_diag <= 0.0 {
        return Err(Error::IllConditioned { condition: f64::INFINITY });
    }
    let chol = cholesky(gram.clone())?;
    let l = chol.l();
    let min_pivot = (0..k).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
    let max_pivot = (0..k).map(|i| l[(i, i)].re).fold(0.0, f64::max);
    if min_pivot <= 1e-7 * max_pivot {
        return Err(Error::IllConditioned { condition: (max_pivot / min_pivot).powi(2) });
    }
    let w = &h * chol.inverse();
    let scale = 1.0 / (k as f64).sqrt();
    let blocks: Vec<CVector> = (0..k)
        .map(|i| {
            let c = w.column(i).into_owned();
            let nrm = c.norm();
            c * Complex64::new(scale / nrm, 0.0)
        })
        .collect();
    PrecoderStack::from_blocks(&blocks)
}

/// Achieved sum-SE on the true channels:
/// `Σ_k log₂(1 + |h_kᴴf_k|²/(Σ_{i≠k}|h_kᴴf_i|² + σ_k²/P))`.
pub fn true_sum_se(f: &PrecoderStack, channels: &[CVector], noise_var: &[f64], power: f64) -> Result<f64> {
    if channels.len() != f.num_users() {
        return Err(Error::LengthMismatch { expected: f.num_users(), got: channels.len() });
    }
    if noise_var.len() != channels.len() {
        return Err(Error::LengthMismatch { expected: channels.len(), got: noise_var.len() });
    }
    let blocks = f.blocks();
    Ok(sinrs(&blocks, channels, noise_var, power).iter().map(|s| (1.0 + s).log2()).sum())
}

fn sinrs(blocks: &[CVector], channels: &[CVector], noise_var: &[f64], power: f64) -> Vec<f64> {
    channels
        .iter()
        .zip(noise_var)
        .enumerate()
        .map(|(k, (h, &s))| {
            let mut interference = s / power;
            let mut signal = 0.0;
            for (i, fi) in blocks.iter().enumerate() {
                let g = h.dotc(fi).norm_sqr();
                if i == k {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            signal / interference
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct WmmseOutput {
    pub precoder: PrecoderStack,
    /// Sum-SE of the start point and after every iteration.
    pub se_trace: Vec<f64>,
    pub iterations: usize,
}

/// Weighted-MMSE sum-rate maximization with perfect CSI under the total
/// power constraint `‖f‖ ≤ 1`.
///
/// Each iteration updates the MMSE receivers, the MSE weights, and then the
/// transmit filters `f_k = (Σ_i w_i|u_i|² h_ih_iᴴ + μI)⁻¹ w_k u_k h_k`, with
/// `μ ≥ 0` found by bisection so that the power constraint holds. Stops when
/// the relative sum-SE improvement falls below `1e-4`.
pub fn wmmse_precoder(
    channels: &[CVector],
    noise_var: &[f64],
    power: f64,
    max_iter: usize,
    f0: Option<&PrecoderStack>,
) -> Result<WmmseOutput> {
    if channels.is_empty() {
        return Err(Error::EmptyInput("wmmse needs at least one channel"));
    }
    if noise_var.len() != channels.len() {
        return Err(Error::LengthMismatch { expected: channels.len(), got: noise_var.len() });
    }
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::invalid("power", "must be finite and positive"));
    }
    let n = channels[0].len();
    let k = channels.len();
    // work with P/σ_k²-scaled channels so that the noise term is one
    let scaled: Vec<CVector> =
        channels.iter().zip(noise_var).map(|(h, &s)| h * Complex64::new((power / s).sqrt(), 0.0)).collect();
    let unit = vec![1.0; k];

    let mut blocks = match f0 {
        Some(f) => f.normalized()?.blocks(),
        None => match zf_precoder(channels) {
            Ok(f) => f.blocks(),
            Err(_) => channels
                .iter()
                .map(|h| h * Complex64::new(1.0 / (h.norm().max(1e-300) * (k as f64).sqrt()), 0.0))
                .collect(),
        },
    };
    let rate = |b: &[CVector]| -> f64 { sinrs(b, &scaled, &unit, 1.0).iter().map(|s| (1.0 + s).log2()).sum() };
    let mut se = rate(&blocks);
    let mut trace = vec![se];
    let mut iterations = 0;

    for it in 1..=max_iter {
        // receivers and weights
        let mut u = Vec::with_capacity(k);
        let mut w = Vec::with_capacity(k);
        for (kk, h) in scaled.iter().enumerate() {
            let total: f64 = 1.0 + blocks.iter().map(|fi| h.dotc(fi).norm_sqr()).sum::<f64>();
            let s = h.dotc(&blocks[kk]);
            let uk = s / total;
            let e = 1.0 - s.norm_sqr() / total;
            u.push(uk);
            w.push(1.0 / e.max(1e-300));
        }
        // transmit filters
        let mut j = CMatrix::zeros(n, n);
        for ((h, uk), &wk) in scaled.iter().zip(&u).zip(&w) {
            j += outer(h) * Complex64::new(wk * uk.norm_sqr(), 0.0);
        }
        let rhs = CMatrix::from_columns(
            &scaled.iter().zip(&u).zip(&w).map(|((h, uk), &wk)| h * (*uk * wk)).collect::<Vec<_>>(),
        );
        let eig = nalgebra::SymmetricEigen::new(j);
        let proj = eig.eigenvectors.adjoint() * &rhs;
        let lam = &eig.eigenvalues;
        let lam_max = lam.iter().fold(0.0f64, |a, &b| a.max(b));
        let row_energy: Vec<f64> = (0..n).map(|i| proj.row(i).iter().map(|z| z.norm_sqr()).sum()).collect();
        let power_at = |mu: f64, pinv: bool| -> f64 {
            (0..n)
                .map(|i| {
                    let d = lam[i] + mu;
                    if pinv && lam[i] <= 1e-12 * lam_max {
                        0.0
                    } else {
                        row_energy[i] / (d * d)
                    }
                })
                .sum()
        };
        let mu = if power_at(0.0, true) <= 1.0 {
            0.0
        } else {
            let mut lo = 0.0;
            let mut hi = row_energy.iter().sum::<f64>().sqrt().max(1e-300);
            while power_at(hi, false) > 1.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if power_at(mid, false) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * hi {
                    break;
                }
            }
            hi
        };
        let mut scaled_proj = proj.clone();
        for i in 0..n {
            let d = lam[i] + mu;
            let inv = if mu == 0.0 && lam[i] <= 1e-12 * lam_max { 0.0 } else { 1.0 / d };
            for c in 0..k {
                scaled_proj[(i, c)] *= inv;
            }
        }
        let fmat = &eig.eigenvectors * scaled_proj;
        let candidate: Vec<CVector> = (0..k).map(|c| fmat.column(c).into_owned()).collect();
        let next_se = rate(&candidate);
        if !next_se.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: it });
        }
        iterations = it;
        trace.push(next_se);
        let rel = (next_se - se) / se.abs().max(1e-300);
        blocks = candidate;
        se = next_se;
        if rel.abs() < 1e-4 {
            break;
        }
    }

    Ok(WmmseOutput { precoder: PrecoderStack::from_blocks(&blocks)?, se_trace: trace, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_iterator(n, (0..n).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize, with_cov: bool) -> PrecodingProblem {
        let users = (0..k)
            .map(|_| {
                let h = random_vec(rng, n);
                let cov = if with_cov {
                    let e = random_vec(rng, n) * c(0.3, 0.0);
                    outer(&e)
                } else {
                    CMatrix::zeros(n, n)
                };
                UserCsi { estimate: h, error_cov: cov, noise_var: 0.1 }
            })
            .collect();
        PrecodingProblem::new(users, 1.0).unwrap()
    }

    #[test]
    fn single_user_b_is_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pp = random_problem(&mut rng, 3, 1, true);
        let (_, b) = build_a_b(&pp, 0).unwrap();
        let expected = CMatrix::identity(3, 3) * c(0.1, 0.0);
        assert!((b.to_dense() - expected).norm() < 1e-15);
    }

    #[test]
    fn a_minus_b_is_own_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pp = random_problem(&mut rng, 4, 3, true);
        for _ in 0..20 {
            let f = PrecoderStack::new(random_vec(&mut rng, 12), 4, 3).unwrap();
            for k in 0..3 {
                let (a, b) = build_a_b(&pp, k).unwrap();
                let diff = a.quad_form(f.vector()) - b.quad_form(f.vector());
                let own = quad_form(pp.signal_cov(k), &f.block(k));
                assert!(diff >= -1e-12);
                assert!((diff - own).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_evaluated_two_user_ratio() {
        // N=2, K=2, ĥ_1 = e1, ĥ_2 = e2, Φ = 0, σ²/P = 1, f uniform 1/2 everywhere
        let e1 = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let e2 = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let users = vec![
            UserCsi { estimate: e1, error_cov: CMatrix::zeros(2, 2), noise_var: 1.0 },
            UserCsi { estimate: e2, error_cov: CMatrix::zeros(2, 2), noise_var: 1.0 },
        ];
        let pp = PrecodingProblem::new(users, 1.0).unwrap();
        let f = PrecoderStack::new(CVector::from_element(4, c(0.5, 0.0)), 2, 2).unwrap();
        // fᴴA_1f = |f_1[0]|² + |f_2[0]|² + ‖f‖² = 0.25 + 0.25 + 1 = 1.5
        // fᴴB_1f = 0.25 + 1 = 1.25
        let (a, b) = build_a_b(&pp, 0).unwrap();
        assert!((a.quad_form(f.vector()) - 1.5).abs() < 1e-15);
        assert!((b.quad_form(f.vector()) - 1.25).abs() < 1e-15);
        let g = gamma(&f, &pp).unwrap();
        assert!((g - 1.2 * 1.2).abs() < 1e-14);
        let dense_a = a.to_dense();
        assert!((quad_form(&dense_a, f.vector()) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_user_lower_bound() {
        let h = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0)]);
        let users = vec![UserCsi { estimate: h.clone(), error_cov: CMatrix::zeros(4, 4), noise_var: 1.0 }];
        let pp = PrecodingProblem::new(users, 1.0).unwrap();
        let f = PrecoderStack::new(&h / c(2.0, 0.0), 4, 1).unwrap();
        let se = sum_se_lower_bound(&f, &pp).unwrap();
        assert!((se - 5f64.log2()).abs() < 1e-14);
        assert!((gamma(&f, &pp).unwrap().log2() - se).abs() < 1e-14);
        let t = true_sum_se(&f, &[h], &[1.0], 1.0).unwrap();
        assert!((t - se).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_precoder_has_zero_rate() {
        let h1 = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let h2 = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let users = vec![
            UserCsi { estimate: h1, error_cov: CMatrix::zeros(3, 3), noise_var: 0.5 },
            UserCsi { estimate: h2, error_cov: CMatrix::zeros(3, 3), noise_var: 0.5 },
        ];
        let pp = PrecodingProblem::new(users, 2.0).unwrap();
        let mut f = CVector::zeros(6);
        f[2] = c(0.0, 1.0);
        f[5] = c(1.0, 0.0);
        let f = PrecoderStack::new(f, 3, 2).unwrap().normalized().unwrap();
        assert!(sum_se_lower_bound(&f, &pp).unwrap().abs() < 1e-15);
    }

    #[test]
    fn lower_bound_vanishes_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut prev = f64::INFINITY;
        let h = random_vec(&mut rng, 4);
        let f = PrecoderStack::new(&h / c(h.norm(), 0.0), 4, 1).unwrap();
        for s in [1.0, 1e3, 1e6, 1e9] {
            let users = vec![UserCsi { estimate: h.clone(), error_cov: CMatrix::zeros(4, 4), noise_var: s }];
            let pp = PrecodingProblem::new(users, 1.0).unwrap();
            let se = sum_se_lower_bound(&f, &pp).unwrap();
            assert!(se < prev);
            prev = se;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn gamma_log_identity_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pp = random_problem(&mut rng, 6, 4, true);
        for _ in 0..50 {
            let f = PrecoderStack::new(random_vec(&mut rng, 24), 6, 4).unwrap();
            let g = gamma(&f, &pp).unwrap();
            let se = sum_se_lower_bound(&f.normalized().unwrap(), &pp).unwrap();
            assert!((g.log2() - se).abs() < 1e-12 * se.abs().max(1.0));
            let scaled = f.scaled(c(-3.7, 0.4));
            assert!((gamma(&scaled, &pp).unwrap() / g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gpip_single_user_is_principal_eigenvector() {
        let g = crate::channel::ArrayGeometry::new(16, 0.5, 1.0, 1.0).unwrap();
        let a = crate::channel::array_response(0.4, 1.0, &g).unwrap();
        let beta = 0.8;
        let e2 = crate::allocation::eta(2).powi(2);
        let users = vec![UserCsi {
            estimate: &a * c(beta * e2.sqrt(), 0.0),
            error_cov: outer(&a) * c(beta * beta * (1.0 - e2), 0.0),
            noise_var: 0.1,
        }];
        let pp = PrecodingProblem::new(users, 1.0).unwrap();
        let f0 = PrecoderStack::new(random_vec(&mut ChaCha8Rng::seed_from_u64(5), 16), 16, 1).unwrap();
        let out = gpip_solve(&pp, &GpipConfig { epsilon: 1e-14, max_iter: 200, keep_best: true }, Some(&f0)).unwrap();
        let target = &a / c(4.0, 0.0);
        let corr = out.precoder.vector().dotc(&target).norm();
        assert!(corr > 1.0 - 1e-6, "corr {corr}");
        assert!(stationarity_residual(&out.precoder, &pp).unwrap() < 1e-8);
    }

    #[test]
    fn gpip_orthogonal_users_align_with_channels() {
        let n = 4;
        let mut h1 = CVector::zeros(n);
        h1[0] = c(1.0, 0.0);
        h1[1] = c(0.0, 1.0);
        let mut h2 = CVector::zeros(n);
        h2[2] = c(1.0, 0.0);
        h2[3] = c(-1.0, 0.0);
        let users = vec![
            UserCsi { estimate: h1.clone(), error_cov: CMatrix::zeros(n, n), noise_var: 1e-3 },
            UserCsi { estimate: h2.clone(), error_cov: CMatrix::zeros(n, n), noise_var: 1e-3 },
        ];
        let pp = PrecodingProblem::new(users, 1.0).unwrap();
        let zf = zf_precoder(&[h1.clone(), h2.clone()]).unwrap();
        let out = gpip_solve(&pp, &GpipConfig::default(), None).unwrap();
        assert!(gamma(&out.precoder, &pp).unwrap() >= gamma(&zf, &pp).unwrap() * (1.0 - 1e-12));
        for (k, h) in [h1, h2].iter().enumerate() {
            let fk = out.precoder.block(k);
            let corr = fk.dotc(h).norm() / (fk.norm() * h.norm());
            assert!(corr > 1.0 - 1e-6);
        }
    }

    #[test]
    fn gpip_keep_best_never_worse_than_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let pp = random_problem(&mut rng, 8, 4, true);
            let zf = zf_precoder(&pp.estimates()).unwrap();
            let out = gpip_solve(&pp, &GpipConfig::default(), None).unwrap();
            assert!(gamma(&out.precoder, &pp).unwrap() >= gamma(&zf, &pp).unwrap());
            assert_eq!(out.se_trace.len(), out.iterations + 1);
            assert!((out.precoder.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gpip_zero_estimates_fall_back_to_eigenvectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let users = (0..3)
            .map(|_| {
                let v = random_vec(&mut rng, 6);
                UserCsi { estimate: CVector::zeros(6), error_cov: outer(&v), noise_var: 0.1 }
            })
            .collect();
        let pp = PrecodingProblem::new(users, 1.0).unwrap();
        assert!(zf_precoder(&pp.estimates()).is_err());
        let out = gpip_solve(&pp, &GpipConfig::default(), None).unwrap();
        assert!(out.final_se().is_finite());
    }

    #[test]
    fn random_point_is_not_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pp = random_problem(&mut rng, 6, 3, false);
        let f = PrecoderStack::new(random_vec(&mut rng, 18), 6, 3).unwrap();
        assert!(stationarity_residual(&f, &pp).unwrap() > 1e-2);
    }

    #[test]
    fn zf_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hs: Vec<CVector> = (0..4).map(|_| random_vec(&mut rng, 8)).collect();
        let f = zf_precoder(&hs).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-12);
        for (k, fk) in f.blocks().iter().enumerate() {
            assert!((fk.norm() - 0.5).abs() < 1e-12);
            for (i, h) in hs.iter().enumerate() {
                if i != k {
                    assert!(h.dotc(fk).norm() < 1e-12 * h.norm());
                }
            }
        }
        // orthonormal channels: ZF is the matched filter
        let mut e = vec![CVector::zeros(3), CVector::zeros(3)];
        e[0][1] = c(0.0, 1.0);
        e[1][2] = c(1.0, 0.0);
        let f = zf_precoder(&e).unwrap();
        for (k, fk) in f.blocks().iter().enumerate() {
            assert!((fk.dotc(&e[k]).norm() / fk.norm() - 1.0).abs() < 1e-12);
        }
        // single user: matched filter
        let h = random_vec(&mut rng, 5);
        let f = zf_precoder(std::slice::from_ref(&h)).unwrap();
        assert!((f.vector().dotc(&h).norm() / h.norm() - 1.0).abs() < 1e-12);
        assert!(zf_precoder(&[CVector::zeros(3)]).is_err());
    }

    #[test]
    fn zf_true_se_is_interference_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let hs: Vec<CVector> = (0..3).map(|_| random_vec(&mut rng, 6)).collect();
        let noise = [0.2, 0.3, 0.4];
        let p = 2.0;
        let f = zf_precoder(&hs).unwrap();
        let expected: f64 = hs
            .iter()
            .zip(f.blocks())
            .zip(noise)
            .map(|((h, fk), s)| (1.0 + h.dotc(&fk).norm_sqr() * p / s).log2())
            .sum();
        assert!((true_sum_se(&f, &hs, &noise, p).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn wmmse_single_user_is_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_vec(&mut rng, 6);
        let out = wmmse_precoder(std::slice::from_ref(&h), &[0.5], 2.0, 50, None).unwrap();
        let expected = (1.0 + h.norm_squared() * 2.0 / 0.5).log2();
        let se = true_sum_se(&out.precoder, &[h], &[0.5], 2.0).unwrap();
        assert!((se - expected).abs() < 1e-9);
    }

    #[test]
    fn wmmse_monotone_and_beats_zf() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let hs: Vec<CVector> = (0..2).map(|_| random_vec(&mut rng, 8)).collect();
            let noise = [0.05, 0.05];
            let out = wmmse_precoder(&hs, &noise, 1.0, 200, None).unwrap();
            for w in out.se_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{:?}", out.se_trace);
            }
            assert!(out.precoder.norm() <= 1.0 + 1e-9);
            let zf = zf_precoder(&hs).unwrap();
            let zse = true_sum_se(&zf, &hs, &noise, 1.0).unwrap();
            let wse = true_sum_se(&out.precoder, &hs, &noise, 1.0).unwrap();
            assert!(wse >= zse - 1e-9);
        }
    }

    #[test]
    fn problem_validation() {
        let h = CVector::from_element(2, c(1.0, 0.0));
        let ok = UserCsi { estimate: h.clone(), error_cov: CMatrix::zeros(2, 2), noise_var: 1.0 };
        assert!(PrecodingProblem::new(vec![], 1.0).is_err());
        assert!(PrecodingProblem::new(vec![ok.clone()], 0.0).is_err());
        let bad = UserCsi { noise_var: 0.0, ..ok.clone() };
        assert!(PrecodingProblem::new(vec![bad], 1.0).is_err());
        let mut skew = CMatrix::zeros(2, 2);
        skew[(0, 1)] = c(1.0, 0.0);
        let bad = UserCsi { error_cov: skew, ..ok };
        assert!(PrecodingProblem::new(vec![bad], 1.0).is_err());
    }
}
