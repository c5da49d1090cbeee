//! Narrowband multipath channel model for a uniform linear array.
//!
//! Uplink and downlink share the geometric parameters of every path (angle,
//! gain, travelled distance) but see carrier-dependent propagation phases and
//! independent reflection phases, so the two channels are not reciprocal.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::wrap_to_2pi;
use crate::{CVector, Complex64, Error, Result};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub num_antennas: usize,
    /// Inter-element spacing in meters.
    pub spacing: f64,
    pub lambda_ul: f64,
    pub lambda_dl: f64,
}

impl ArrayGeometry {
    pub fn new(num_antennas: usize, spacing: f64, lambda_ul: f64, lambda_dl: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::invalid("num_antennas", "must be at least 1"));
        }
        for (name, v) in [("spacing", spacing), ("lambda_ul", lambda_ul), ("lambda_dl", lambda_dl)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(Self { num_antennas, spacing, lambda_ul, lambda_dl })
    }

    /// Half-uplink-wavelength spacing shared by both bands.
    pub fn half_wavelength_ul(num_antennas: usize, lambda_ul: f64, lambda_dl: f64) -> Result<Self> {
        Self::new(num_antennas, lambda_ul / 2.0, lambda_ul, lambda_dl)
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPath {
    /// Angle of arrival/departure in `[-π/2, π/2]`.
    pub aoa: f64,
    /// Path amplitude β ≥ 0, shared by both bands.
    pub gain: f64,
    /// Travelled distance in meters.
    pub distance: f64,
    /// Uplink reflection phase in `[0, 2π)`.
    pub phase_ul: f64,
    /// Downlink reflection phase in `[0, 2π)`.
    pub phase_dl: f64,
}

impl ChannelPath {
    pub fn new(aoa: f64, gain: f64, distance: f64, phase_ul: f64, phase_dl: f64) -> Result<Self> {
        for (name, v) in
            [("aoa", aoa), ("gain", gain), ("distance", distance), ("phase_ul", phase_ul), ("phase_dl", phase_dl)]
        {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        if !(-PI / 2.0..=PI / 2.0).contains(&aoa) {
            return Err(Error::invalid("aoa", "must lie in [-π/2, π/2]"));
        }
        if gain < 0.0 {
            return Err(Error::invalid("gain", "must be nonnegative"));
        }
        if distance < 0.0 {
            return Err(Error::invalid("distance", "must be nonnegative"));
        }
        Ok(Self { aoa, gain, distance, phase_ul: wrap_to_2pi(phase_ul), phase_dl: wrap_to_2pi(phase_dl) })
    }

    /// Complex gain `β·exp(j(−2πr/λ + φ))` at the given wavelength.
    fn complex_gain(&self, lambda: f64, phase: f64) -> Complex64 {
        Complex64::from_polar(self.gain, -2.0 * PI * self.distance / lambda + phase)
    }

    pub fn ul_gain(&self, lambda_ul: f64) -> Complex64 {
        self.complex_gain(lambda_ul, self.phase_ul)
    }

    pub fn dl_gain(&self, lambda_dl: f64) -> Complex64 {
        self.complex_gain(lambda_dl, self.phase_dl)
    }

    /// Phase of the downlink complex gain, in `[0, 2π)`. This is the quantity
    /// a user quantizes and feeds back.
    pub fn dl_phase(&self, lambda_dl: f64) -> f64 {
        wrap_to_2pi(-2.0 * PI * self.distance / lambda_dl + self.phase_dl)
    }
}

/// Ordered multipath set of one user. Path index is meaningful: feedback bits
/// and quantized phases are attached by position.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<ChannelPath>,
}

impl PathSet {
    pub fn new(paths: Vec<ChannelPath>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::EmptyInput("path set needs at least one path"));
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[ChannelPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn gains(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.gain).collect()
    }

    /// β² per path, the allocation weights.
    pub fn powers(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.gain * p.gain).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain * p.gain).sum()
    }

    /// Copy with every gain divided by `sqrt(Σβ²)`; a zero-power set is
    /// returned unchanged.
    pub fn normalized(&self) -> PathSet {
        let p = self.total_power();
        if p <= 0.0 {
            return self.clone();
        }
        let s = p.sqrt();
        PathSet { paths: self.paths.iter().map(|path| ChannelPath { gain: path.gain / s, ..*path }).collect() }
    }
}

/// Random perturbation applied to the geometric estimates the base station
/// extracts from uplink pilots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimationNoise {
    pub aoa_sigma: f64,
    pub gain_rel_sigma: f64,
}

impl EstimationNoise {
    pub fn new(aoa_sigma: f64, gain_rel_sigma: f64) -> Result<Self> {
        if !(aoa_sigma.is_finite() && aoa_sigma >= 0.0) {
            return Err(Error::invalid("aoa_sigma", "must be finite and nonnegative"));
        }
        if !(gain_rel_sigma.is_finite() && gain_rel_sigma >= 0.0) {
            return Err(Error::invalid("gain_rel_sigma", "must be finite and nonnegative"));
        }
        Ok(Self { aoa_sigma, gain_rel_sigma })
    }

    pub fn is_zero(&self) -> bool {
        self.aoa_sigma == 0.0 && self.gain_rel_sigma == 0.0
    }
}

/// ULA response `[exp(−j·2π/λ·n·d·sinθ)]_{n=0..N-1}`.
pub fn array_response(theta: f64, lambda: f64, geom: &ArrayGeometry) -> Result<CVector> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("theta"));
    }
    if !lambda.is_finite() {
        return Err(Error::NonFinite("lambda"));
    }
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    Ok(steering(theta, lambda, geom))
}

pub(crate) fn steering(theta: f64, lambda: f64, geom: &ArrayGeometry) -> CVector {
    let k = -2.0 * PI / lambda * geom.spacing * theta.sin();
    CVector::from_iterator(
        geom.num_antennas,
        (0..geom.num_antennas).map(|n| {
            // reduce before exp to keep the phase accurate for large N
            let phase = (k * n as f64).rem_euclid(2.0 * PI);
            Complex64::from_polar(1.0, phase)
        }),
    )
}

fn synthesize(ps: &PathSet, geom: &ArrayGeometry, lambda: f64, dl: bool) -> CVector {
    let mut h = CVector::zeros(geom.num_antennas);
    for p in ps.paths() {
        let g = if dl { p.dl_gain(lambda) } else { p.ul_gain(lambda) };
        h += steering(p.aoa, lambda, geom) * g;
    }
    h
}

/// Downlink channel `Σ_ℓ g_ℓ^DL a(θ_ℓ, λ_DL)`.
pub fn dl_channel(ps: &PathSet, geom: &ArrayGeometry) -> CVector {
    synthesize(ps, geom, geom.lambda_dl, true)
}

/// Uplink channel `Σ_ℓ g_ℓ^UL a(θ_ℓ, λ_UL)`.
pub fn ul_channel(ps: &PathSet, geom: &ArrayGeometry) -> CVector {
    synthesize(ps, geom, geom.lambda_ul, false)
}

/// Log-distance path loss `PL(d) = PL₀·(d/d₀)^(−α)`, linear power gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    pub exponent: f64,
    /// Linear power gain at the reference distance.
    pub ref_gain: f64,
    pub ref_distance: f64,
}

impl PathLoss {
    pub fn new(exponent: f64, ref_gain: f64, ref_distance: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(Error::invalid("pl_exponent", "must be finite and nonnegative"));
        }
        if !(ref_gain.is_finite() && ref_gain > 0.0) {
            return Err(Error::invalid("pl_ref_gain", "must be finite and positive"));
        }
        if !(ref_distance.is_finite() && ref_distance > 0.0) {
            return Err(Error::invalid("pl_ref_distance", "must be finite and positive"));
        }
        Ok(Self { exponent, ref_gain, ref_distance })
    }

    pub fn gain(&self, distance: f64) -> Result<f64> {
        if !distance.is_finite() {
            return Err(Error::NonFinite("distance"));
        }
        if distance <= 0.0 {
            return Err(Error::invalid("distance", "must be positive"));
        }
        Ok(self.ref_gain * (distance / self.ref_distance).powf(-self.exponent))
    }
}

/// Everything needed to draw one drop of user path sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub num_users: usize,
    pub num_paths: usize,
    /// Users are placed uniformly in the annulus `[min_distance, cell_radius]`.
    pub cell_radius: f64,
    pub min_distance: f64,
    pub path_loss: PathLoss,
    /// Per-path power ratio ρ: `w_ℓ ∝ ρ^ℓ`, normalized to sum to one.
    pub decay_ratio: f64,
    /// Path distances are the user distance plus a uniform excess in `[0, max]`.
    pub excess_distance_max: f64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::invalid("num_users", "must be at least 1"));
        }
        if self.num_paths == 0 {
            return Err(Error::invalid("num_paths", "must be at least 1"));
        }
        if !(self.min_distance > 0.0 && self.min_distance <= self.cell_radius) {
            return Err(Error::invalid("min_distance", "must satisfy 0 < min_distance <= cell radius"));
        }
        if !(self.decay_ratio > 0.0 && self.decay_ratio <= 1.0) {
            return Err(Error::invalid("decay_ratio", "must lie in (0, 1]"));
        }
        if !(self.excess_distance_max >= 0.0 && self.excess_distance_max.is_finite()) {
            return Err(Error::invalid("excess_distance_max", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Normalized per-path power profile.
    pub fn power_profile(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_paths).map(|l| self.decay_ratio.powi(l as i32)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    }
}

/// Draws one path set per user.
///
/// AoAs are uniform on `[−π/2, π/2]`, both reflection phases are independent
/// and uniform on `[0, 2π)`, and `β_ℓ² = PL(r_user)·w_ℓ`.
pub fn draw_scene<R: Rng + ?Sized>(params: &SceneParams, rng: &mut R) -> Result<Vec<PathSet>> {
    params.validate()?;
    let profile = params.power_profile();
    let r2_min = params.min_distance * params.min_distance;
    let r2_max = params.cell_radius * params.cell_radius;
    (0..params.num_users)
        .map(|_| {
            let u: f64 = rng.random();
            let r_user = (r2_min + u * (r2_max - r2_min)).sqrt();
            let pl = params.path_loss.gain(r_user)?;
            let paths = profile
                .iter()
                .map(|w| {
                    let aoa = rng.random_range(-PI / 2.0..=PI / 2.0);
                    let excess = rng.random::<f64>() * params.excess_distance_max;
                    let phase_ul = rng.random::<f64>() * 2.0 * PI;
                    let phase_dl = rng.random::<f64>() * 2.0 * PI;
                    ChannelPath::new(aoa, (pl * w).sqrt(), r_user + excess, phase_ul, phase_dl)
                })
                .collect::<Result<Vec<_>>>()?;
            PathSet::new(paths)
        })
        .collect()
}

/// Emulates imperfect AoA/gain estimation: Gaussian AoA error clamped to the
/// support, multiplicative Gaussian gain error clamped at zero. Distances and
/// phases are untouched.
pub fn perturb_estimates<R: Rng + ?Sized>(ps: &PathSet, noise: &EstimationNoise, rng: &mut R) -> PathSet {
    if noise.is_zero() {
        return ps.clone();
    }
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let paths = ps
        .paths()
        .iter()
        .map(|p| {
            let aoa = (p.aoa + noise.aoa_sigma * std.sample(rng)).clamp(-PI / 2.0, PI / 2.0);
            let gain = (p.gain * (1.0 + noise.gain_rel_sigma * std.sample(rng))).max(0.0);
            ChannelPath { aoa, gain, ..*p }
        })
        .collect();
    PathSet { paths }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::new(n, 0.5, 1.0, 1.0).unwrap()
    }

    fn scene_params(num_paths: usize, decay: f64) -> SceneParams {
        SceneParams {
            num_users: 4,
            num_paths,
            cell_radius: 250.0,
            min_distance: 10.0,
            path_loss: PathLoss::new(3.0, 1e-6, 1.0).unwrap(),
            decay_ratio: decay,
            excess_distance_max: 100.0,
        }
    }

    #[test]
    fn broadside_response_is_all_ones() {
        let a = array_response(0.0, 0.7, &ArrayGeometry::new(4, 0.3, 0.7, 0.7).unwrap()).unwrap();
        for z in a.iter() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn thirty_degree_half_wavelength() {
        let a = array_response(PI / 6.0, 1.0, &geom(2)).unwrap();
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn response_rejects_bad_input() {
        assert!(array_response(f64::NAN, 1.0, &geom(2)).is_err());
        assert!(array_response(0.1, f64::INFINITY, &geom(2)).is_err());
        assert!(array_response(0.1, 0.0, &geom(2)).is_err());
    }

    #[test]
    fn response_conjugate_symmetry_and_unit_modulus() {
        let g = geom(16);
        let a = array_response(0.37, 1.0, &g).unwrap();
        let b = array_response(-0.37, 1.0, &g).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x.norm() - 1.0).abs() < 1e-14);
            assert!((x.conj() - y).norm() < 1e-13);
        }
        let self_corr = a.dotc(&a).re / 16.0;
        assert!((self_corr - 1.0).abs() < 1e-14);
    }

    #[test]
    fn steering_vectors_decorrelate_with_n() {
        let mut prev = f64::INFINITY;
        for n in [64, 256, 1024] {
            let g = geom(n);
            let a = array_response(0.2, 1.0, &g).unwrap();
            let b = array_response(-0.4, 1.0, &g).unwrap();
            let c = a.dotc(&b).norm() / n as f64;
            assert!(c < prev);
            prev = c;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn single_unit_path_is_steering_vector() {
        let g = ArrayGeometry::new(8, 0.5, 1.0, 0.8).unwrap();
        let ps = PathSet::new(vec![ChannelPath::new(0.3, 1.0, 0.0, 1.0, 0.0).unwrap()]).unwrap();
        let h = dl_channel(&ps, &g);
        let a = array_response(0.3, 0.8, &g).unwrap();
        assert!((h - a).norm() < 1e-13);
    }

    #[test]
    fn zero_gain_path_vanishes() {
        let g = geom(8);
        let p1 = ChannelPath::new(0.3, 0.8, 12.0, 1.0, 2.0).unwrap();
        let p2 = ChannelPath::new(-0.9, 0.0, 40.0, 3.0, 0.5).unwrap();
        let one = dl_channel(&PathSet::new(vec![p1]).unwrap(), &g);
        let two = dl_channel(&PathSet::new(vec![p1, p2]).unwrap(), &g);
        assert!((one - two).norm() < 1e-14);
    }

    #[test]
    fn ul_equals_dl_under_identical_parameters_only() {
        let g = geom(8);
        let p = ChannelPath::new(0.3, 1.3, 0.0, 0.9, 0.9).unwrap();
        let ps = PathSet::new(vec![p]).unwrap();
        assert!((ul_channel(&ps, &g) - dl_channel(&ps, &g)).norm() < 1e-14);

        let g2 = ArrayGeometry::new(8, 0.5, 1.0, 1.0 / 1.2).unwrap();
        let p = ChannelPath::new(0.3, 1.3, 37.1, 0.9, 2.1).unwrap();
        let ps = PathSet::new(vec![p]).unwrap();
        assert!((ul_channel(&ps, &g2) - dl_channel(&ps, &g2)).norm() > 1e-3);
    }

    #[test]
    fn scaled_single_path_norm() {
        let g = geom(16);
        let ps = PathSet::new(vec![ChannelPath::new(0.7, 2.0, 5.0, 0.0, 1.0).unwrap()]).unwrap();
        assert!((ul_channel(&ps, &g).norm_squared() - 64.0).abs() < 1e-10);
    }

    #[test]
    fn channel_is_linear_in_gains() {
        let g = geom(12);
        let paths = vec![
            ChannelPath::new(0.1, 0.4, 10.0, 0.3, 1.2).unwrap(),
            ChannelPath::new(-0.6, 0.9, 55.0, 2.3, 4.0).unwrap(),
        ];
        let doubled: Vec<_> = paths.iter().map(|p| ChannelPath { gain: 2.0 * p.gain, ..*p }).collect();
        let h1 = dl_channel(&PathSet::new(paths).unwrap(), &g);
        let h2 = dl_channel(&PathSet::new(doubled).unwrap(), &g);
        assert!((&h2 - &h1 * Complex64::new(2.0, 0.0)).norm() < 1e-12);
        let bound = 12.0 * (0.4f64 + 0.9).powi(2);
        assert!(h1.norm_squared() <= bound);
    }

    #[test]
    fn path_loss_values() {
        let pl = PathLoss::new(2.0, 1e-3, 10.0).unwrap();
        assert_eq!(pl.gain(10.0).unwrap(), 1e-3);
        assert!((pl.gain(20.0).unwrap() - 1e-3 / 4.0).abs() < 1e-18);
        assert!(pl.gain(5.0).unwrap() >= pl.gain(6.0).unwrap());
        assert!(pl.gain(0.0).is_err());
    }

    #[test]
    fn scene_is_deterministic_per_seed() {
        let p = scene_params(3, 0.7);
        let a = draw_scene(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_scene(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = draw_scene(&p, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn flat_profile_gives_equal_gains() {
        let p = scene_params(3, 1.0);
        for ps in draw_scene(&p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap() {
            let g = ps.gains();
            assert!((g[0] - g[1]).abs() < 1e-18 && (g[1] - g[2]).abs() < 1e-18);
        }
    }

    #[test]
    fn aoa_mean_is_zero() {
        // uniform on [−π/2, π/2]: sd = π/√12
        let p = SceneParams { num_users: 1, ..scene_params(1, 0.7) };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            let s = draw_scene(&p, &mut rng).unwrap();
            sum += s[0].paths()[0].aoa;
        }
        let mean = sum / draws as f64;
        let se = PI / 12f64.sqrt() / (draws as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn zero_noise_perturbation_is_identity() {
        let p = scene_params(3, 0.7);
        let scene = draw_scene(&p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = perturb_estimates(&scene[0], &EstimationNoise::default(), &mut rng);
        assert_eq!(out, scene[0]);
    }

    #[test]
    fn aoa_perturbation_has_folded_normal_mean() {
        let sigma = 0.01;
        let noise = EstimationNoise::new(sigma, 0.0).unwrap();
        let ps = PathSet::new(vec![ChannelPath::new(0.2, 1.0, 1.0, 0.0, 0.0).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            sum += (perturb_estimates(&ps, &noise, &mut rng).paths()[0].aoa - 0.2).abs();
        }
        let mean = sum / draws as f64;
        let expected = sigma * (2.0 / PI).sqrt();
        // folded-normal sd = σ·sqrt(1 − 2/π)
        let se = sigma * (1.0 - 2.0 / PI).sqrt() / (draws as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se);
    }

    #[test]
    fn perturbed_gains_never_negative() {
        let noise = EstimationNoise::new(0.5, 3.0).unwrap();
        let ps = PathSet::new(vec![
            ChannelPath::new(1.5, 1.0, 1.0, 0.0, 0.0).unwrap(),
            ChannelPath::new(-1.5, 0.1, 1.0, 0.0, 0.0).unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let q = perturb_estimates(&ps, &noise, &mut rng);
            for p in q.paths() {
                assert!(p.gain >= 0.0);
                assert!(p.aoa.abs() <= PI / 2.0);
            }
        }
    }
}
