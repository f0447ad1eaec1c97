//! Synthetic photon-count experiments with a cloud falling through the cavity.
//!
//! ⟨N_eff⟩(t) follows a Gaussian envelope in time. Each trial draws atomic
//! configurations according to an [`AtomMotion`] strategy, maps N_eff to a
//! detected rate through the [`SignalModel`], adds background and draws
//! Poisson counts per bin. Times on the cloud scale are in ms, bins in µs.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::CountStream;
use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, Error, Result};
use crate::neff::{NeffEnsemble, SamplingBox};
use crate::params::{mode_weight, PhysicalParams};
use crate::registry::Registry;
use crate::rng::{self, SimRng};
use crate::signal::{DetectionMode, SignalModel};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;
const IRLS_ROUNDS: usize = 8;

/// Time for an atom moving at `speed` (m/s, i.e. µm/µs) to cross 2w, in µs.
pub fn transit_time(params: &PhysicalParams, speed: f64) -> Result<f64> {
    if speed.is_nan() || speed <= 0.0 {
        return Err(Error::invalid("speed", format!("must be > 0, got {speed}")));
    }
    ensure_positive("waist", params.waist)?;
    Ok(2.0 * params.waist / speed)
}

/// Cloud envelope: ⟨N_eff⟩(t) = peak·exp[−4 ln2 (t − centre)²/fwhm²].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudProfile {
    pub peak_mean_neff: f64,
    /// Full width at half maximum, ms; infinite for a stationary cloud.
    pub fwhm_ms: f64,
    pub centre_ms: f64,
    /// Time the fluorescence drive is switched on, ms.
    #[serde(default)]
    pub drive_on_ms: Option<f64>,
    /// Loss of atoms once the drive is on, 1/e time in µs.
    #[serde(default)]
    pub decay_us: Option<f64>,
}

impl CloudProfile {
    pub fn gaussian(peak_mean_neff: f64, fwhm_ms: f64, centre_ms: f64) -> Self {
        CloudProfile {
            peak_mean_neff,
            fwhm_ms,
            centre_ms,
            drive_on_ms: None,
            decay_us: None,
        }
    }

    /// Stationary ⟨N_eff⟩ with no envelope.
    pub fn constant(mean_neff: f64) -> Self {
        Self::gaussian(mean_neff, f64::INFINITY, 0.0)
    }

    pub fn with_drive(mut self, drive_on_ms: f64, decay_us: Option<f64>) -> Self {
        self.drive_on_ms = Some(drive_on_ms);
        self.decay_us = decay_us;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("peak_mean_neff", self.peak_mean_neff)?;
        if self.fwhm_ms.is_nan() || self.fwhm_ms <= 0.0 {
            return Err(Error::invalid("fwhm_ms", format!("must be > 0, got {}", self.fwhm_ms)));
        }
        ensure_finite("centre_ms", self.centre_ms)?;
        if let Some(t) = self.drive_on_ms {
            ensure_finite("drive_on_ms", t)?;
        }
        if let Some(d) = self.decay_us {
            ensure_positive("decay_us", d)?;
        }
        Ok(())
    }

    pub fn envelope(&self, t_ms: f64) -> f64 {
        if self.fwhm_ms.is_infinite() {
            return 1.0;
        }
        let d = (t_ms - self.centre_ms) / self.fwhm_ms;
        (-FOUR_LN2 * d * d).exp()
    }

    /// ⟨N_eff⟩ at `t_ms`; the drive-induced decay applies in fluorescence mode only.
    pub fn mean_neff(&self, t_ms: f64, mode: DetectionMode) -> f64 {
        let mut m = self.peak_mean_neff * self.envelope(t_ms);
        if let (DetectionMode::Fluorescence, Some(on), Some(tau)) = (mode, self.drive_on_ms, self.decay_us) {
            if t_ms > on {
                m *= (-(t_ms - on) * 1000.0 / tau).exp();
            }
        }
        m
    }

    /// Whether the atom-dependent signal is present at `t_ms`.
    pub fn signal_on(&self, t_ms: f64, mode: DetectionMode) -> bool {
        match (mode, self.drive_on_ms) {
            (DetectionMode::Fluorescence, Some(on)) => t_ms >= on,
            _ => true,
        }
    }
}

/// Uniform bin grid; bin i covers [start + i·T, start + (i+1)·T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_ms: f64,
    pub bin_width_us: f64,
    pub bins: usize,
}

impl TimeGrid {
    pub fn centre_ms(&self, i: usize) -> f64 {
        self.start_ms + (i as f64 + 0.5) * self.bin_width_us * 1e-3
    }

    pub fn centres_ms(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.centre_ms(i)).collect()
    }
}

pub fn mean_neff_timeline(profile: &CloudProfile, grid: &TimeGrid, mode: DetectionMode) -> Vec<f64> {
    (0..grid.bins)
        .map(|i| profile.mean_neff(grid.centre_ms(i), mode))
        .collect()
}

/// One simulated experiment: detection scheme, binning and ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub signal: SignalModel,
    pub grid: TimeGrid,
    pub n_trials: usize,
    /// Homogeneous background, counts/µs.
    pub background_per_us: f64,
    /// Atomic speed through the mode, m/s.
    pub atom_speed: f64,
    /// Name of the [`AtomMotion`] strategy.
    pub motion: String,
    /// Bins per configuration for the block strategy; defaults to the transit time.
    pub refresh_bins: Option<usize>,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        ensure_positive("bin_width_us", self.grid.bin_width_us)?;
        ensure_finite("start_ms", self.grid.start_ms)?;
        if self.grid.bins == 0 {
            return Err(Error::invalid("bins", "need at least one bin"));
        }
        if self.n_trials == 0 {
            return Err(Error::invalid("n_trials", "need at least one trial"));
        }
        ensure_non_negative("background_per_us", self.background_per_us)?;
        ensure_positive("atom_speed", self.atom_speed)?;
        if self.refresh_bins == Some(0) {
            return Err(Error::invalid("refresh_bins", "must be at least 1"));
        }
        atom_motions().build(&self.motion, &()).map(|_| ())
    }

    pub fn transit_time_us(&self) -> f64 {
        2.0 * self.signal.params.waist / self.atom_speed
    }

    pub fn refresh(&self) -> usize {
        self.refresh_bins
            .unwrap_or_else(|| (self.transit_time_us() / self.grid.bin_width_us).round().max(1.0) as usize)
    }
}

/// Geometry and timing shared by the motion strategies.
#[derive(Debug, Clone, Copy)]
pub struct MotionContext {
    pub params: PhysicalParams,
    pub region: SamplingBox,
    pub bin_width_us: f64,
    /// µm/µs.
    pub speed: f64,
    pub refresh_bins: usize,
}

/// Produces one trial's per-bin N_eff for a given ⟨N_eff⟩ timeline.
pub trait AtomMotion: Send + Sync {
    fn name(&self) -> &'static str;
    fn neff_trace(&self, ctx: &MotionContext, means: &[f64], rng: &mut SimRng) -> Vec<f64>;
}

/// Frozen atoms, redrawn every `refresh_bins` bins.
pub struct BlockRefresh;

/// Atoms crossing the mode along x at constant speed.
pub struct Ballistic;

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    }
}

impl AtomMotion for BlockRefresh {
    fn name(&self) -> &'static str {
        "block"
    }

    fn neff_trace(&self, ctx: &MotionContext, means: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let atoms_per_mean = ctx.region.density_for_mean(&ctx.params, 1.0) * ctx.region.volume();
        let mut out = Vec::with_capacity(means.len());
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for block in means.chunks(ctx.refresh_bins) {
            let top = block.iter().copied().fold(0.0, f64::max);
            let n = poisson_count(atoms_per_mean * top, rng);
            atoms.clear();
            for _ in 0..n {
                let w = mode_weight(ctx.region.draw_position(rng), &ctx.params);
                atoms.push((rng.random::<f64>(), w));
            }
            for &m in block {
                if m >= top {
                    out.push(atoms.iter().map(|a| a.1).sum());
                } else {
                    // thinning keeps the Poisson law at the lower mean
                    let u = m / top;
                    out.push(atoms.iter().filter(|a| a.0 < u).map(|a| a.1).sum());
                }
            }
        }
        out
    }
}

impl AtomMotion for Ballistic {
    fn name(&self) -> &'static str {
        "ballistic"
    }

    fn neff_trace(&self, ctx: &MotionContext, means: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let bins = means.len();
        let mut out = vec![0.0; bins];
        let top = means.iter().copied().fold(0.0, f64::max);
        if top <= 0.0 {
            return out;
        }
        let x_half = ctx.region.half_width;
        let dx = ctx.speed * ctx.bin_width_us;
        let duration = bins as f64 * ctx.bin_width_us;
        let density = ctx.region.density_for_mean(&ctx.params, top);
        let cross_section = 2.0 * x_half * ctx.region.axial_length;
        let span = 2.0 * x_half + ctx.speed * duration;
        let n = poisson_count(density * span * cross_section, rng);
        let accept: Vec<f64> = means.iter().map(|m| m / top).collect();
        for _ in 0..n {
            let x0 = -x_half - ctx.speed * duration + span * rng.random::<f64>();
            let y = rng.random_range(-x_half..x_half);
            let z = ctx.region.axial_length * rng.random::<f64>();
            let label: f64 = rng.random();
            // bins whose centre x0 + v(i + ½)T lies inside |x| < x_half
            let first = ((-x_half - x0) / dx - 0.5).ceil().max(0.0);
            let last = ((x_half - x0) / dx - 0.5).floor().min(bins as f64 - 1.0);
            if last < first {
                continue;
            }
            for i in first as usize..=last as usize {
                if label < accept[i] {
                    let x = x0 + (i as f64 + 0.5) * dx;
                    out[i] += mode_weight([x, y, z], &ctx.params);
                }
            }
        }
        out
    }
}

pub fn atom_motions() -> &'static Registry<dyn AtomMotion> {
    static REG: OnceLock<Registry<dyn AtomMotion>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn AtomMotion>::new("atom_motion", "block")
            .register(
                "block",
                "configurations frozen for one transit time, then redrawn",
                |_| Box::new(BlockRefresh),
            )
            .register(
                "ballistic",
                "atoms crossing the mode at constant transverse speed",
                |_| Box::new(Ballistic),
            )
    })
}

/// Per-trial counts for `plan`; deterministic in `plan.seed` and independent of thread count.
pub fn simulate_counts(plan: &ExperimentPlan, profile: &CloudProfile) -> Result<CountStream> {
    plan.validate()?;
    profile.validate()?;
    let motion = atom_motions().build(&plan.motion, &())?;
    let params = plan.signal.params;
    let ctx = MotionContext {
        params,
        region: SamplingBox::for_params(&params),
        bin_width_us: plan.grid.bin_width_us,
        speed: plan.atom_speed,
        refresh_bins: plan.refresh(),
    };
    let mode = plan.signal.mode;
    let means = mean_neff_timeline(profile, &plan.grid, mode);
    let gate: Vec<bool> = plan
        .grid
        .centres_ms()
        .iter()
        .map(|&t| profile.signal_on(t, mode))
        .collect();
    let bw = plan.grid.bin_width_us;
    let trials: Vec<Vec<u64>> = (0..plan.n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng::stream(plan.seed, trial as u64);
            let neff = motion.neff_trace(&ctx, &means, &mut rng);
            neff.iter()
                .zip(&gate)
                .map(|(&n, &on)| {
                    let signal = if on { plan.signal.detected_rate(n) } else { 0.0 };
                    poisson_count((signal + plan.background_per_us) * bw, &mut rng)
                })
                .collect()
        })
        .collect();
    CountStream::new(bw, plan.n_trials, plan.grid.bins, trials.concat())
}

/// Trial-averaged counts per bin with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileData {
    pub grid: TimeGrid,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trials: usize,
    /// Pooled Σ Var/Σ mean over bins; 1 for Poisson counts.
    pub dispersion: f64,
}

impl ProfileData {
    pub fn from_stream(stream: &CountStream, start_ms: f64) -> Result<Self> {
        let n = stream.trials();
        if n == 0 || stream.bins() == 0 {
            return Err(Error::EmptyInput("empty count stream".into()));
        }
        let mean = stream.mean_per_bin();
        let var: Vec<f64> = (0..stream.bins())
            .map(|b| {
                if n > 1 {
                    (0..n)
                        .map(|i| (stream.trial(i)[b] as f64 - mean[b]).powi(2))
                        .sum::<f64>()
                        / (n - 1) as f64
                } else {
                    mean[b]
                }
            })
            .collect();
        let total: f64 = mean.iter().sum();
        let dispersion = if total > 0.0 {
            var.iter().sum::<f64>() / total
        } else {
            1.0
        };
        // an empty bin still carries the Poisson uncertainty of one count
        let stderr = var.iter().map(|v| (v.max(1.0 / n as f64) / n as f64).sqrt()).collect();
        Ok(ProfileData {
            grid: TimeGrid {
                start_ms,
                bin_width_us: stream.bin_width(),
                bins: stream.bins(),
            },
            mean,
            stderr,
            trials: n,
            dispersion,
        })
    }
}

/// Expected detected rate as a function of ⟨N_eff⟩, extended to negative means by
/// odd reflection about ⟨N_eff⟩ = 0 so that fits near zero are unbiased.
#[derive(Debug, Clone)]
pub struct RateCurve {
    signal: SignalModel,
    table: Option<(f64, Vec<f64>)>,
}

impl RateCurve {
    pub fn eval(&self, m: f64) -> f64 {
        if m < 0.0 {
            return 2.0 * self.eval(0.0) - self.eval(-m);
        }
        match &self.table {
            None => self.signal.detected_rate(m),
            Some((step, v)) => {
                let x = m / step;
                let i = (x.floor() as usize).min(v.len() - 2);
                let f = x - i as f64;
                v[i] + f * (v[i + 1] - v[i])
            }
        }
    }

    fn slope(&self, m: f64) -> f64 {
        let h = match &self.table {
            None => 1e-6,
            Some((step, _)) => 0.5 * step,
        };
        (self.eval(m + h) - self.eval(m - h)) / (2.0 * h)
    }
}

/// How ⟨N_eff⟩ maps to the mean detected rate in the cloud fit.
pub trait ProfileFitModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn rate_curve(&self, signal: &SignalModel, max_mean: f64, seed: u64) -> Result<RateCurve>;
}

/// R(⟨N_eff⟩), i.e. C_N = C₁⟨N_eff⟩.
pub struct MeanField;

/// ⟨R(N_eff)⟩ over the N_eff distribution at each mean.
pub struct DistributionAveraged {
    pub configs: usize,
    pub nodes: usize,
}

impl ProfileFitModel for MeanField {
    fn name(&self) -> &'static str {
        "mean_field"
    }

    fn rate_curve(&self, signal: &SignalModel, _max_mean: f64, _seed: u64) -> Result<RateCurve> {
        Ok(RateCurve {
            signal: *signal,
            table: None,
        })
    }
}

impl ProfileFitModel for DistributionAveraged {
    fn name(&self) -> &'static str {
        "distribution_averaged"
    }

    fn rate_curve(&self, signal: &SignalModel, max_mean: f64, seed: u64) -> Result<RateCurve> {
        ensure_positive("max_mean", max_mean)?;
        let ens = NeffEnsemble::new(&signal.params, max_mean, self.configs, seed)?;
        let step = max_mean / (self.nodes - 1) as f64;
        let values = (0..self.nodes)
            .into_par_iter()
            .map(|k| ens.expectation(k as f64 * step, |n| signal.detected_rate(n)))
            .collect();
        Ok(RateCurve {
            signal: *signal,
            table: Some((step, values)),
        })
    }
}

pub fn profile_fit_models() -> &'static Registry<dyn ProfileFitModel> {
    static REG: OnceLock<Registry<dyn ProfileFitModel>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn ProfileFitModel>::new("profile_fit_model", "distribution_averaged")
            .register(
                "distribution_averaged",
                "rate averaged over the N_eff distribution at each mean",
                |_| {
                    Box::new(DistributionAveraged {
                        configs: 20_000,
                        nodes: 513,
                    })
                },
            )
            .register("mean_field", "rate evaluated at the mean N_eff", |_| {
                Box::new(MeanField)
            })
    })
}

/// Fitted cloud envelope with standard errors; an unconstrained parameter has infinite error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudFit {
    pub profile: CloudProfile,
    pub peak_stderr: f64,
    pub centre_stderr: f64,
    pub fwhm_stderr: f64,
    pub chi2_per_dof: f64,
    pub iterations: usize,
    pub model: String,
}

/// Settings for [`fit_cloud_profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub model: String,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            model: profile_fit_models().default_name().to_string(),
            max_iterations: 200,
            seed: 0xc10d,
        }
    }
}

struct FitProblem<'a> {
    data: &'a ProfileData,
    curve: RateCurve,
    guess: CloudProfile,
    mode: DetectionMode,
    background: f64,
    t: Vec<f64>,
    gate: Vec<bool>,
    sigma: Vec<f64>,
}

impl FitProblem<'_> {
    fn profile(&self, theta: &[f64; 3]) -> CloudProfile {
        CloudProfile {
            peak_mean_neff: theta[0],
            centre_ms: theta[1],
            fwhm_ms: theta[2].exp(),
            ..self.guess
        }
    }

    fn model_mean(&self, theta: &[f64; 3], i: usize) -> f64 {
        let bw = self.data.grid.bin_width_us;
        if !self.gate[i] {
            return bw * self.background;
        }
        let shape = CloudProfile {
            peak_mean_neff: 1.0,
            ..self.profile(theta)
        }
        .mean_neff(self.t[i], self.mode);
        bw * (self.curve.eval(theta[0] * shape) + self.background)
    }

    /// Poisson variances from the model, scaled by the observed overdispersion.
    fn reweight(&mut self, theta: &[f64; 3]) {
        let n = self.data.trials as f64;
        self.sigma = (0..self.t.len())
            .map(|i| {
                let mu = self.model_mean(theta, i).max(0.5 / n);
                (self.data.dispersion.max(1e-6) * mu / n).sqrt()
            })
            .collect();
    }

    /// Weighted residuals and Jacobian in (peak, centre, ln fwhm).
    fn evaluate(&self, theta: &[f64; 3]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.t.len();
        let bw = self.data.grid.bin_width_us;
        let p = self.profile(theta);
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 3);
        let unit = CloudProfile {
            peak_mean_neff: 1.0,
            ..p
        };
        for i in 0..n {
            let s = self.sigma[i];
            let t = self.t[i];
            if !self.gate[i] {
                r[i] = (bw * self.background - self.data.mean[i]) / s;
                continue;
            }
            let shape = unit.mean_neff(t, self.mode);
            let m = theta[0] * shape;
            r[i] = (bw * (self.curve.eval(m) + self.background) - self.data.mean[i]) / s;
            let k = bw * self.curve.slope(m) / s;
            let d = (t - theta[1]) / p.fwhm_ms;
            j[(i, 0)] = k * shape;
            j[(i, 1)] = k * m * 2.0 * FOUR_LN2 * d / p.fwhm_ms;
            j[(i, 2)] = k * m * 2.0 * FOUR_LN2 * d * d;
        }
        (r, j)
    }

    /// Levenberg–Marquardt at fixed weights. Returns the final (θ, χ², J, iterations).
    fn minimize(&self, start: [f64; 3], max_iterations: usize) -> Result<([f64; 3], f64, DMatrix<f64>, usize)> {
        let mut theta = start;
        let (mut r, mut j) = self.evaluate(&theta);
        let mut chi2 = r.norm_squared();
        let mut lambda = 1e-3;
        for iteration in 1..=max_iterations {
            let jtj = j.transpose() * &j;
            let g = j.transpose() * &r;
            let floor = 1e-12 * jtj.diagonal().max().max(1e-300);
            let mut a = jtj.clone();
            for k in 0..3 {
                a[(k, k)] += lambda * jtj[(k, k)].max(floor);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let (r2, j2) = self.evaluate(&trial);
            let chi2_new = r2.norm_squared();
            if chi2_new.is_finite() && chi2_new <= chi2 {
                let gain = chi2 - chi2_new;
                theta = trial;
                r = r2;
                j = j2;
                chi2 = chi2_new;
                lambda = (lambda / 10.0).max(1e-12);
                if gain <= 1e-10 * chi2.max(1.0) {
                    return Ok((theta, chi2, j, iteration));
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    return Ok((theta, chi2, j, iteration));
                }
            }
        }
        Err(Error::NonConvergence {
            what: "cloud profile fit",
            residual: chi2,
        })
    }
}

/// Fit of the cloud envelope (peak ⟨N_eff⟩, centre, FWHM) to trial-averaged
/// counts by iteratively reweighted least squares: Levenberg–Marquardt at
/// fixed weights, with Poisson variances re-evaluated from the current model.
/// Weights taken from the data themselves would bias the fit low at the few
/// counts per bin typical of these experiments.
///
/// `guess` also supplies the fixed drive timing and decay. `background` is the
/// known background rate in counts/µs.
pub fn fit_cloud_profile(
    data: &ProfileData,
    signal: &SignalModel,
    background: f64,
    guess: &CloudProfile,
    options: &FitOptions,
) -> Result<CloudFit> {
    signal.validate()?;
    guess.validate()?;
    ensure_non_negative("background", background)?;
    if !guess.fwhm_ms.is_finite() {
        return Err(Error::invalid("fwhm_ms", "the fit needs a finite initial width"));
    }
    if data.mean.len() != data.grid.bins || data.grid.bins < 4 || data.trials == 0 {
        return Err(Error::invalid("data", "need at least 4 bins and one trial"));
    }
    let model = profile_fit_models().build(&options.model, &())?;
    let max_mean = (2.0 * guess.peak_mean_neff).max(0.1);
    let curve = model.rate_curve(signal, max_mean, options.seed)?;
    let t = data.grid.centres_ms();
    let gate = t.iter().map(|&x| guess.signal_on(x, signal.mode)).collect();
    let mut problem = FitProblem {
        data,
        curve,
        guess: *guess,
        mode: signal.mode,
        background,
        t,
        gate,
        sigma: Vec::new(),
    };

    let mut theta = [guess.peak_mean_neff, guess.centre_ms, guess.fwhm_ms.ln()];
    let mut iterations = 0;
    let mut result = None;
    for _ in 0..IRLS_ROUNDS {
        problem.reweight(&theta);
        let (next, chi2, j, its) = problem.minimize(theta, options.max_iterations)?;
        iterations += its;
        let moved = (0..3).any(|k| (next[k] - theta[k]).abs() > 1e-7 * (1.0 + theta[k].abs()));
        theta = next;
        result = Some((chi2, j));
        if !moved {
            break;
        }
    }
    let (chi2, j) = result.expect("at least one round");

    let se = parameter_errors(&j);
    let fwhm = theta[2].exp();
    let dof = (data.grid.bins as f64 - 3.0).max(1.0);
    Ok(CloudFit {
        profile: problem.profile(&theta),
        peak_stderr: se[0],
        centre_stderr: se[1],
        fwhm_stderr: se[2] * fwhm,
        chi2_per_dof: chi2 / dof,
        iterations,
        model: model.name().to_string(),
    })
}

/// Standard errors from (JᵀJ)⁻¹, restricted to columns the data constrain.
fn parameter_errors(j: &DMatrix<f64>) -> [f64; 3] {
    let norms: Vec<f64> = (0..3).map(|k| j.column(k).norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..3).filter(|&k| norms[k] > 1e-8 * top && top > 0.0).collect();
    let mut out = [f64::INFINITY; 3];
    if active.is_empty() {
        return out;
    }
    let sub = j.select_columns(&active);
    let cov = (sub.transpose() * &sub)
        .pseudo_inverse(1e-14)
        .unwrap_or_else(|_| DMatrix::from_element(active.len(), active.len(), f64::INFINITY));
    for (a, &k) in active.iter().enumerate() {
        out[k] = cov[(a, a)].max(0.0).sqrt();
    }
    out
}
