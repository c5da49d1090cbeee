use log::debug;
use rayon::prelude::*;

use super::config::{dbm_to_watts, AllocatorChoice, PrecoderChoice, ReconstructionChoice, ScenarioConfig};
use super::records::{mean_and_std_err, DropRecord, ExperimentRecord};
use super::{trial_rng, STREAM_ESTIMATION, STREAM_SCENE};
use crate::allocation::{allocate_greedy, allocate_uniform, theoretical_weighted_mse, AllocationProblem};
use crate::channel::{dl_channel, draw_scene, perturb_estimates, ArrayGeometry, PathSet};
use crate::feedback::FeedbackPlan;
use crate::linalg::norm_sqr;
use crate::precoding::{
    gpip_solve, sum_se_lower_bound, true_sum_se, wmmse_precoder, zf_precoder, PrecoderStack, PrecodingProblem,
};
use crate::reconstruction::{
    asymptotic_delta_norm, outer_product_error, outer_product_error_norm, reconstruct_dft, reconstruct_mmse,
    reconstruct_no_feedback, NoFeedbackCovariance, ReconstructedChannel,
};
use crate::{CMatrix, CVector, Result};

#[derive(Debug, Clone, PartialEq)]
struct Key {
    n: usize,
    l: usize,
    btot: u32,
    power_dbm: Option<f64>,
    method: &'static str,
    metric: &'static str,
}

type Samples = Vec<(Key, f64)>;

fn run_trials<F>(cfg: &ScenarioConfig, trial: F) -> Result<Vec<Samples>>
where
    F: Fn(usize) -> Result<Samples> + Sync + Send,
{
    (0..cfg.trials).into_par_iter().map(trial).collect()
}

fn aggregate(experiment: &'static str, cfg: &ScenarioConfig, per_trial: Vec<Samples>) -> Vec<ExperimentRecord> {
    let trials = per_trial.len();
    let layout = &per_trial[0];
    (0..layout.len())
        .map(|i| {
            let key = &layout[i].0;
            let xs: Vec<f64> = per_trial
                .iter()
                .map(|t| {
                    debug_assert_eq!(&t[i].0, key);
                    t[i].1
                })
                .collect();
            let (mean, std_err) = mean_and_std_err(&xs);
            ExperimentRecord {
                experiment,
                n: key.n,
                k: cfg.users,
                l: key.l,
                btot: key.btot,
                power_dbm: key.power_dbm,
                method: key.method.to_string(),
                metric: key.metric,
                mean,
                std_err,
                trials,
            }
        })
        .collect()
}

/// Per-path bits for one user under the configured allocator.
pub fn allocate_bits(choice: AllocatorChoice, gains: &[f64], budget: u32) -> Result<Vec<u32>> {
    Ok(match choice {
        AllocatorChoice::Greedy => allocate_greedy(&AllocationProblem::from_gains(gains, budget)?).bits,
        AllocatorChoice::Uniform => allocate_uniform(&AllocationProblem::from_gains(gains, budget)?).bits,
        AllocatorChoice::None => vec![0; gains.len()],
    })
}

fn draw(cfg: &ScenarioConfig, trial: usize, num_paths: usize) -> Result<Vec<PathSet>> {
    let params = cfg.scene(num_paths)?;
    draw_scene(&params, &mut trial_rng(cfg.seed, trial, STREAM_SCENE))
}

/// Reconstruction MSE versus feedback budget.
///
/// For each user the feedback bits are allocated greedily, uniformly, or not
/// at all; the closed-form MSE `N·Σβ²(1−η²)` and the realized `‖h − ĥ‖²` are
/// averaged over users. `nmse_*` metrics divide by the channel energy
/// `N·Σβ²`. A `unit_phase` row reports the geometry-only estimate that
/// assumes zero path phases.
pub fn run_mse_experiment(cfg: &ScenarioConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    const METHODS: [(AllocatorChoice, &str); 3] = [
        (AllocatorChoice::Greedy, "greedy"),
        (AllocatorChoice::Uniform, "uniform"),
        (AllocatorChoice::None, "no_feedback"),
    ];
    let per_trial = run_trials(cfg, |t| {
        let mut out = Samples::new();
        let k = cfg.users as f64;
        for &l in &cfg.paths {
            let scene = draw(cfg, t, l)?;
            for &n in &cfg.antennas {
                let geom = cfg.geometry(n)?;
                let hs: Vec<CVector> = scene.iter().map(|ps| dl_channel(ps, &geom)).collect();
                let energies: Vec<f64> = scene.iter().map(|ps| n as f64 * ps.total_power()).collect();
                let (mut unit_mse, mut unit_nmse) = (0.0, 0.0);
                for ((ps, h), e) in scene.iter().zip(&hs).zip(&energies) {
                    let rc = reconstruct_no_feedback(ps, &geom, NoFeedbackCovariance::Zero);
                    let err = norm_sqr(&(h - &rc.estimate));
                    unit_mse += err / k;
                    unit_nmse += err / e / k;
                }
                for &b in &cfg.btot {
                    let key = |method, metric| Key { n, l, btot: b, power_dbm: None, method, metric };
                    for (choice, name) in METHODS {
                        let mut acc = [0.0; 4];
                        for ((ps, h), e) in scene.iter().zip(&hs).zip(&energies) {
                            let gains = ps.gains();
                            let bits = allocate_bits(choice, &gains, b)?;
                            let fp = FeedbackPlan::quantize(ps, &bits, geom.lambda_dl)?;
                            let rc = reconstruct_mmse(ps, &fp, &geom)?;
                            let closed = theoretical_weighted_mse(&gains, &bits, n)?;
                            let mc = norm_sqr(&(h - &rc.estimate));
                            acc[0] += closed / k;
                            acc[1] += mc / k;
                            acc[2] += closed / e / k;
                            acc[3] += mc / e / k;
                        }
                        for (metric, v) in ["mse_closed", "mse_mc", "nmse_closed", "nmse_mc"].into_iter().zip(acc) {
                            out.push((key(name, metric), v));
                        }
                    }
                    out.push((key("unit_phase", "mse_mc"), unit_mse));
                    out.push((key("unit_phase", "nmse_mc"), unit_nmse));
                }
            }
        }
        Ok(out)
    })?;
    Ok(aggregate("mse", cfg, per_trial))
}

/// Outer-product approximation error `‖hhᴴ − ĥĥᴴ − Φ‖_F²/N²` with each
/// user's path gains normalized to unit total power, next to its large-array
/// limit evaluated at the realized quantization errors.
pub fn run_delta_experiment(cfg: &ScenarioConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let method = cfg.allocator.as_str();
    let per_trial = run_trials(cfg, |t| {
        let mut out = Samples::new();
        let k = cfg.users as f64;
        for &l in &cfg.paths {
            let scene: Vec<PathSet> = draw(cfg, t, l)?.iter().map(PathSet::normalized).collect();
            for &n in &cfg.antennas {
                let geom = cfg.geometry(n)?;
                for &b in &cfg.btot {
                    let (mut finite, mut limit) = (0.0, 0.0);
                    for ps in &scene {
                        let gains = ps.gains();
                        let bits = allocate_bits(cfg.allocator, &gains, b)?;
                        let fp = FeedbackPlan::quantize(ps, &bits, geom.lambda_dl)?;
                        let rc = reconstruct_mmse(ps, &fp, &geom)?;
                        finite += outer_product_error_norm(&dl_channel(ps, &geom), &rc)? / k;
                        limit += asymptotic_delta_norm(&gains, &bits, &fp.deltas())? / k;
                    }
                    let key = |metric| Key { n, l, btot: b, power_dbm: None, method, metric };
                    out.push((key("delta_norm"), finite));
                    out.push((key("delta_asymptotic"), limit));
                }
            }
        }
        Ok(out)
    })?;
    Ok(aggregate("delta", cfg, per_trial))
}

/// Precoder/CSI combinations evaluated by [`run_se_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeMethod {
    /// GPIP on the MMSE estimate and its error covariance.
    GpipMmseCov,
    /// GPIP on the MMSE estimate, covariance ignored.
    GpipMmseNoCov,
    ZfMmse,
    /// GPIP on the unit-phase estimate with the no-feedback covariance.
    GpipNoFeedback,
    ZfNoFeedback,
    GpipDft,
    ZfDft,
    /// WMMSE with perfect CSI; an upper reference.
    WmmsePerfect,
    /// GPIP on the MMSE reconstruction built from exact angles and gains;
    /// only reported when estimation noise is configured.
    GpipMmseCovIdeal,
}

impl SeMethod {
    pub const ALL: [SeMethod; 9] = [
        Self::GpipMmseCov,
        Self::GpipMmseNoCov,
        Self::ZfMmse,
        Self::GpipNoFeedback,
        Self::ZfNoFeedback,
        Self::GpipDft,
        Self::ZfDft,
        Self::WmmsePerfect,
        Self::GpipMmseCovIdeal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GpipMmseCov => "gpip_mmse_cov",
            Self::GpipMmseNoCov => "gpip_mmse_nocov",
            Self::ZfMmse => "zf_mmse",
            Self::GpipNoFeedback => "gpip_nofb",
            Self::ZfNoFeedback => "zf_nofb",
            Self::GpipDft => "gpip_dft",
            Self::ZfDft => "zf_dft",
            Self::WmmsePerfect => "wmmse_perfect",
            Self::GpipMmseCovIdeal => "gpip_mmse_cov_ideal",
        }
    }

    fn is_gpip(&self) -> bool {
        matches!(
            self,
            Self::GpipMmseCov | Self::GpipMmseNoCov | Self::GpipNoFeedback | Self::GpipDft | Self::GpipMmseCovIdeal
        )
    }
}

#[derive(Clone)]
struct Outcome {
    true_se: f64,
    lb_se: f64,
    iterations: usize,
}

/// Shared per-drop state for one `(L, N, P)` point.
struct Drop<'a> {
    cfg: &'a ScenarioConfig,
    geom: ArrayGeometry,
    truth: &'a [PathSet],
    estimated: &'a [PathSet],
    channels: Vec<CVector>,
    noise: Vec<f64>,
    power: f64,
}

impl Drop<'_> {
    fn evaluate(&self, f: Option<&PrecoderStack>, pp: &PrecodingProblem, iterations: usize) -> Result<Outcome> {
        Ok(match f {
            Some(f) => Outcome {
                true_se: true_sum_se(f, &self.channels, &self.noise, self.power)?,
                lb_se: sum_se_lower_bound(f, pp)?,
                iterations,
            },
            // ZF undefined (rank-deficient estimates): nothing is transmitted
            None => Outcome { true_se: 0.0, lb_se: 0.0, iterations },
        })
    }

    fn gpip(&self, rcs: &[ReconstructedChannel]) -> Result<Outcome> {
        let pp = PrecodingProblem::from_reconstructions(rcs, &self.noise, self.power)?;
        let out = gpip_solve(&pp, &self.cfg.gpip, None)?;
        self.evaluate(Some(&out.precoder), &pp, out.iterations)
    }

    fn zf(&self, rcs: &[ReconstructedChannel]) -> Result<Outcome> {
        let pp = PrecodingProblem::from_reconstructions(rcs, &self.noise, self.power)?;
        let estimates: Vec<CVector> = rcs.iter().map(|rc| rc.estimate.clone()).collect();
        let f = match zf_precoder(&estimates) {
            Ok(f) => Some(f),
            Err(e) => {
                debug!("zero-forcing unavailable: {e}");
                None
            }
        };
        self.evaluate(f.as_ref(), &pp, 0)
    }

    fn wmmse(&self) -> Result<Outcome> {
        let out = wmmse_precoder(&self.channels, &self.noise, self.power, self.cfg.wmmse_iters, None)?;
        let se = true_sum_se(&out.precoder, &self.channels, &self.noise, self.power)?;
        Ok(Outcome { true_se: se, lb_se: se, iterations: out.iterations })
    }

    fn mmse(&self, params: &[PathSet], btot: u32) -> Result<Vec<ReconstructedChannel>> {
        self.truth
            .iter()
            .zip(params)
            .map(|(ps, est)| {
                let bits = allocate_bits(self.cfg.allocator, &est.gains(), btot)?;
                let fp = FeedbackPlan::quantize(ps, &bits, self.geom.lambda_dl)?;
                reconstruct_mmse(est, &fp, &self.geom)
            })
            .collect()
    }

    fn no_feedback(&self, cov: NoFeedbackCovariance) -> Vec<ReconstructedChannel> {
        self.estimated.iter().map(|est| reconstruct_no_feedback(est, &self.geom, cov)).collect()
    }

    fn dft(&self, btot: u32) -> Result<Vec<ReconstructedChannel>> {
        self.channels.iter().map(|h| reconstruct_dft(h, btot, &self.geom)).collect()
    }
}

fn strip(rcs: &[ReconstructedChannel]) -> Vec<ReconstructedChannel> {
    rcs.iter().map(ReconstructedChannel::without_covariance).collect()
}

/// Visits every `(L, N, P)` point of one drop in grid order.
fn for_each_point(
    cfg: &ScenarioConfig,
    trial: usize,
    mut visit: impl FnMut(usize, f64, &Drop<'_>) -> Result<()>,
) -> Result<()> {
    let noise_w = cfg.noise_watts();
    let est_noise = cfg.estimation_noise()?;
    for &l in &cfg.paths {
        let truth = draw(cfg, trial, l)?;
        let mut rng = trial_rng(cfg.seed, trial, STREAM_ESTIMATION);
        let estimated: Vec<PathSet> = truth.iter().map(|ps| perturb_estimates(ps, &est_noise, &mut rng)).collect();
        for &n in &cfg.antennas {
            let geom = cfg.geometry(n)?;
            let channels: Vec<CVector> = truth.iter().map(|ps| dl_channel(ps, &geom)).collect();
            for &p_dbm in &cfg.power_dbm {
                let drop = Drop {
                    cfg,
                    geom,
                    truth: &truth,
                    estimated: &estimated,
                    channels: channels.clone(),
                    noise: vec![noise_w; cfg.users],
                    power: dbm_to_watts(p_dbm),
                };
                visit(l, p_dbm, &drop)?;
            }
        }
    }
    Ok(())
}

/// Ergodic sum-SE on the true channels for every method in [`SeMethod::ALL`]
/// across the `(L, N, P, B_tot)` grid. Metrics per method are `true_sum_se`,
/// `lb_sum_se` (the bound evaluated on the CSI the precoder was designed
/// from) and, for GPIP, `gpip_iterations`.
///
/// Feedback bits are allocated with the configured allocator on the
/// estimated path gains. A drop is reused across `N`, `P` and `B_tot`.
pub fn run_se_experiment(cfg: &ScenarioConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let with_ideal = !cfg.estimation_noise()?.is_zero();
    let per_trial = run_trials(cfg, |t| {
        let mut out = Samples::new();
        for_each_point(cfg, t, |l, p_dbm, drop| {
            let wmmse = drop.wmmse()?;
            let nofb_gpip = drop.gpip(&drop.no_feedback(cfg.nofb_covariance))?;
            let nofb_zf = drop.zf(&drop.no_feedback(NoFeedbackCovariance::Zero))?;
            for &b in &cfg.btot {
                let mmse = drop.mmse(drop.estimated, b)?;
                let dft = drop.dft(b)?;
                for method in SeMethod::ALL {
                    let o = match method {
                        SeMethod::GpipMmseCov => drop.gpip(&mmse)?,
                        SeMethod::GpipMmseNoCov => drop.gpip(&strip(&mmse))?,
                        SeMethod::ZfMmse => drop.zf(&mmse)?,
                        SeMethod::GpipNoFeedback => nofb_gpip.clone(),
                        SeMethod::ZfNoFeedback => nofb_zf.clone(),
                        SeMethod::GpipDft => drop.gpip(&dft)?,
                        SeMethod::ZfDft => drop.zf(&dft)?,
                        SeMethod::WmmsePerfect => wmmse.clone(),
                        SeMethod::GpipMmseCovIdeal if with_ideal => drop.gpip(&drop.mmse(drop.truth, b)?)?,
                        SeMethod::GpipMmseCovIdeal => continue,
                    };
                    let key = |metric| Key {
                        n: drop.geom.num_antennas,
                        l,
                        btot: b,
                        power_dbm: Some(p_dbm),
                        method: method.as_str(),
                        metric,
                    };
                    out.push((key("true_sum_se"), o.true_se));
                    out.push((key("lb_sum_se"), o.lb_se));
                    if method.is_gpip() {
                        out.push((key("gpip_iterations"), o.iterations as f64));
                    }
                }
            }
            Ok(())
        })?;
        Ok(out)
    })?;
    Ok(aggregate("se", cfg, per_trial))
}

/// One precoder on every drop, using the configured reconstruction and
/// allocator. WMMSE ignores the reconstruction and uses the true channels.
pub fn run_precode(cfg: &ScenarioConfig, method: PrecoderChoice) -> Result<Vec<DropRecord>> {
    cfg.validate()?;
    let per_drop: Vec<Vec<DropRecord>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut out = Vec::new();
            for_each_point(cfg, t, |l, p_dbm, drop| {
                for &b in &cfg.btot {
                    let rcs = match cfg.reconstruction {
                        ReconstructionChoice::Mmse => drop.mmse(drop.estimated, b)?,
                        ReconstructionChoice::NoFeedback => drop.no_feedback(cfg.nofb_covariance),
                        ReconstructionChoice::Dft => drop.dft(b)?,
                    };
                    let o = match method {
                        PrecoderChoice::Gpip => drop.gpip(&rcs)?,
                        PrecoderChoice::Zf => drop.zf(&rcs)?,
                        PrecoderChoice::Wmmse => drop.wmmse()?,
                    };
                    out.push(DropRecord {
                        drop: t,
                        n: drop.geom.num_antennas,
                        k: cfg.users,
                        l,
                        btot: b,
                        power_dbm: p_dbm,
                        method: method.as_str(),
                        reconstruction: cfg.reconstruction.as_str(),
                        true_sum_se: o.true_se,
                        lb_sum_se: o.lb_se,
                        iterations: o.iterations,
                    });
                }
                Ok(())
            })?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_drop.into_iter().flatten().collect())
}

/// Matrices available for export by [`diagnostic_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticMatrix {
    /// Reconstruction error covariance `Φ`.
    ErrorCovariance,
    /// `Δ = hhᴴ − ĥĥᴴ − Φ`.
    OuterProductError,
}

/// One user's diagnostic matrix on drop `trial`, at the first point of each
/// sweep axis, with the configured allocator.
pub fn diagnostic_matrix(cfg: &ScenarioConfig, trial: usize, user: usize, which: DiagnosticMatrix) -> Result<CMatrix> {
    cfg.validate()?;
    if user >= cfg.users {
        return Err(crate::Error::invalid("user", format!("index {user} out of range for {} users", cfg.users)));
    }
    let geom = cfg.geometry(cfg.antennas[0])?;
    let ps = &draw(cfg, trial, cfg.paths[0])?[user];
    let bits = allocate_bits(cfg.allocator, &ps.gains(), cfg.btot[0])?;
    let fp = FeedbackPlan::quantize(ps, &bits, geom.lambda_dl)?;
    let rc = reconstruct_mmse(ps, &fp, &geom)?;
    Ok(match which {
        DiagnosticMatrix::ErrorCovariance => rc.error_cov.to_dense(),
        DiagnosticMatrix::OuterProductError => outer_product_error(&dl_channel(ps, &geom), &rc)?.0,
    })
}
