//! The effective atom number N_eff = Σᵢ |χ(rᵢ)|² as a random variable.
//!
//! Atoms are placed uniformly at random in a box around the cavity mode, with
//! a Poisson-distributed count. The resulting N_eff has Var/mean = 3/8 for a
//! standing-wave mode at every density. Two distribution models are provided
//! behind [`NeffModel`]: the empirical Monte Carlo distribution and the
//! large-⟨N_eff⟩ Gaussian form P(N) ∝ exp[−(4/3)(N−⟨N⟩)²/⟨N⟩].

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::params::{mode_weight, PhysicalParams};
use crate::registry::Registry;
use crate::rng::{self, SimRng};
use crate::special::erf;

/// Radial half-width of the default sampling box, in waists.
pub const DEFAULT_RADIAL_WAISTS: f64 = 4.0;
/// Configurations drawn per parallel work unit in [`sample_neff`].
const CHUNK: usize = 2048;
/// Number of batches used for batch-means standard errors.
const MIN_MOMENT_SAMPLES: usize = 200;

/// Axis-aligned sampling region: |x|, |y| ≤ `half_width`, 0 ≤ z ≤ `axial_length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub half_width: f64,
    pub axial_length: f64,
}

impl SamplingBox {
    /// 4w radially, cavity length rounded to a whole number of half-wavelengths.
    pub fn for_params(params: &PhysicalParams) -> Self {
        Self::with_radial_waists(params, DEFAULT_RADIAL_WAISTS)
    }

    pub fn with_radial_waists(params: &PhysicalParams, waists: f64) -> Self {
        let half_wave = params.lambda / 2.0;
        let periods = (params.cavity_length / half_wave).round().max(1.0);
        SamplingBox {
            half_width: waists * params.waist,
            axial_length: periods * half_wave,
        }
    }

    pub fn volume(&self) -> f64 {
        4.0 * self.half_width * self.half_width * self.axial_length
    }

    /// ∫_box |χ|² d³r, the mode volume seen by atoms in this box.
    pub fn mode_integral(&self, params: &PhysicalParams) -> f64 {
        let w = params.waist;
        let transverse = w * (PI / 2.0).sqrt() * erf(2f64.sqrt() * self.half_width / w);
        self.axial_length / 2.0 * transverse * transverse
    }

    /// Uniform density giving mean N_eff `mean` in this box.
    pub fn density_for_mean(&self, params: &PhysicalParams, mean: f64) -> f64 {
        mean / self.mode_integral(params)
    }

    /// Rejects boxes that would truncate the N_eff statistics.
    pub fn validate_for(&self, params: &PhysicalParams) -> Result<()> {
        ensure_positive("box.half_width", self.half_width)?;
        ensure_positive("box.axial_length", self.axial_length)?;
        let min_half = DEFAULT_RADIAL_WAISTS * params.waist;
        if self.half_width < min_half * (1.0 - 1e-9) {
            return Err(Error::BoxTooSmall(format!(
                "radial half-width {:.4} µm is below 4 waists ({min_half:.4} µm)",
                self.half_width
            )));
        }
        let periods = self.axial_length / (params.lambda / 2.0);
        if (periods - periods.round()).abs() > 1e-6 * periods.max(1.0) || periods.round() < 1.0 {
            return Err(Error::BoxTooSmall(format!(
                "axial length {:.6} µm is not a whole number of half-wavelengths ({periods:.6})",
                self.axial_length
            )));
        }
        Ok(())
    }

    pub(crate) fn draw_position<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let h = self.half_width;
        [
            rng.random_range(-h..h),
            rng.random_range(-h..h),
            rng.random_range(0.0..self.axial_length),
        ]
    }
}

/// One realization of the atomic positions with its N_eff and collective coupling G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomConfiguration {
    pub positions: Vec<[f64; 3]>,
    pub neff: f64,
    pub collective_coupling: f64,
}

impl AtomConfiguration {
    pub fn from_positions(positions: Vec<[f64; 3]>, params: &PhysicalParams) -> Self {
        let neff = neff_of(&positions, params);
        AtomConfiguration {
            positions,
            neff,
            collective_coupling: neff.sqrt(),
        }
    }

    pub fn empty() -> Self {
        AtomConfiguration {
            positions: Vec::new(),
            neff: 0.0,
            collective_coupling: 0.0,
        }
    }

    pub fn recompute_neff(&self, params: &PhysicalParams) -> f64 {
        neff_of(&self.positions, params)
    }
}

pub fn neff_of(positions: &[[f64; 3]], params: &PhysicalParams) -> f64 {
    positions.iter().map(|&r| mode_weight(r, params)).sum()
}

fn atom_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mean).expect("positive finite mean");
    poisson.sample(rng) as usize
}

/// Draws one configuration: Poisson(density·volume) atoms, uniform in `region`.
pub fn sample_configuration<R: Rng + ?Sized>(
    params: &PhysicalParams,
    density: f64,
    region: &SamplingBox,
    rng: &mut R,
) -> Result<AtomConfiguration> {
    ensure_non_negative("density", density)?;
    region.validate_for(params)?;
    let n = atom_count(density * region.volume(), rng);
    let positions = (0..n).map(|_| region.draw_position(rng)).collect();
    Ok(AtomConfiguration::from_positions(positions, params))
}

/// Seeded convenience wrapper around [`sample_configuration`].
pub fn sample_configuration_seeded(
    params: &PhysicalParams,
    density: f64,
    region: &SamplingBox,
    seed: u64,
) -> Result<AtomConfiguration> {
    sample_configuration(params, density, region, &mut rng::stream(seed, 0))
}

/// N_eff of a freshly drawn configuration, without keeping positions.
pub(crate) fn draw_neff(params: &PhysicalParams, atoms_mean: f64, region: &SamplingBox, rng: &mut SimRng) -> f64 {
    let n = atom_count(atoms_mean, rng);
    (0..n).map(|_| mode_weight(region.draw_position(rng), params)).sum()
}

/// `count` independent N_eff samples at the given density.
///
/// Work is split into fixed chunks with their own RNG streams, so the output
/// is identical for any number of worker threads.
pub fn sample_neff(
    params: &PhysicalParams,
    density: f64,
    region: &SamplingBox,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    ensure_non_negative("density", density)?;
    region.validate_for(params)?;
    let atoms_mean = density * region.volume();
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len)
                .map(|_| draw_neff(params, atoms_mean, region, &mut rng))
                .collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Sample mean, variance and Var/mean. The Var/mean error is the delta-method
/// (influence function) estimate, so it does not depend on sample order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeffMoments {
    pub count: usize,
    pub mean: f64,
    pub mean_stderr: f64,
    pub variance: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
}

impl NeffMoments {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < MIN_MOMENT_SAMPLES {
            return Err(Error::EmptyInput(format!(
                "need at least {MIN_MOMENT_SAMPLES} samples for moment errors, got {n}"
            )));
        }
        let (mean, variance) = mean_var(samples);
        let ratio_stderr = if mean > 0.0 {
            let influence: Vec<f64> = samples
                .iter()
                .map(|&x| {
                    let d = x - mean;
                    (d * d - variance) / mean - variance * d / (mean * mean)
                })
                .collect();
            (mean_var(&influence).1 / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(NeffMoments {
            count: n,
            mean,
            mean_stderr: (variance / n as f64).sqrt(),
            variance,
            ratio: if mean > 0.0 { variance / mean } else { 0.0 },
            ratio_stderr,
        })
    }
}

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeffKind {
    MonteCarloEmpirical,
    GaussianApprox,
}

/// Tabulated probability density of N_eff with quadrature weights.
///
/// `weights` sum to one and integrate any function of N_eff against the
/// density: trapezoid weights for the Gaussian form, bin masses for the
/// empirical histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeffDistribution {
    pub mean_neff: f64,
    pub kind: NeffKind,
    pub nodes: Vec<f64>,
    pub density: Vec<f64>,
    pub weights: Vec<f64>,
    pub normalization: f64,
    pub truncated: bool,
    /// Sorted raw samples (empirical kind only).
    pub samples: Option<Vec<f64>>,
}

impl NeffDistribution {
    /// ∫ f(N) P(N) dN by quadrature over the tabulated density.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Sample mean of f over raw samples, when present.
    pub fn sample_expectation(&self, f: impl Fn(f64) -> f64) -> Option<f64> {
        self.samples
            .as_ref()
            .map(|s| s.iter().map(|&x| f(x)).sum::<f64>() / s.len() as f64)
    }

    pub fn total_probability(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|x| (x - m) * (x - m))
    }

    fn sigma(&self) -> f64 {
        (3.0 * self.mean_neff / 8.0).sqrt()
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match (&self.kind, &self.samples) {
            (NeffKind::MonteCarloEmpirical, Some(s)) => s.partition_point(|&v| v <= x) as f64 / s.len() as f64,
            (NeffKind::GaussianApprox, _) => {
                let m = self.mean_neff;
                let scale = self.sigma() * 2f64.sqrt();
                let phi = |u: f64| erf((u - m) / scale);
                if self.truncated {
                    if x <= 0.0 {
                        return 0.0;
                    }
                    (phi(x) - phi(0.0)) / (1.0 - phi(0.0))
                } else {
                    0.5 * (1.0 + phi(x))
                }
            }
            _ => {
                // histogram without samples: integrate bin masses
                let width = self.bin_width();
                let mut acc = 0.0;
                for (&c, &w) in self.nodes.iter().zip(&self.weights) {
                    if x >= c + width / 2.0 {
                        acc += w;
                    } else if x > c - width / 2.0 {
                        acc += w * (x - (c - width / 2.0)) / width;
                    }
                }
                acc
            }
        }
    }

    fn bin_width(&self) -> f64 {
        if self.nodes.len() > 1 {
            self.nodes[1] - self.nodes[0]
        } else {
            1.0
        }
    }
}

/// Kolmogorov–Smirnov distance sup |F_a − F_b|.
pub fn ks_distance(a: &NeffDistribution, b: &NeffDistribution) -> f64 {
    fn empirical_vs(s: &[f64], other: &NeffDistribution) -> f64 {
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = other.cdf(x);
                ((i + 1) as f64 / n - f).abs().max((f - i as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }
    match (&a.samples, &b.samples) {
        (Some(s), _) => empirical_vs(s, b),
        (None, Some(s)) => empirical_vs(s, a),
        (None, None) => {
            let lo = a.nodes[0].min(b.nodes[0]);
            let hi = a.nodes[a.nodes.len() - 1].max(b.nodes[b.nodes.len() - 1]);
            (0..=4000)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / 4000.0;
                    (a.cdf(x) - b.cdf(x)).abs()
                })
                .fold(0.0, f64::max)
        }
    }
}

/// Inputs shared by all N_eff distribution models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeffRequest {
    pub params: PhysicalParams,
    pub mean_neff: f64,
    /// Monte Carlo configurations.
    pub samples: usize,
    /// Histogram bins for the empirical density.
    pub bins: usize,
    /// Quadrature nodes for analytic densities.
    pub resolution: usize,
    /// Truncate the Gaussian form at N_eff = 0.
    pub truncate: bool,
    pub seed: u64,
}

impl NeffRequest {
    pub fn new(params: PhysicalParams, mean_neff: f64, seed: u64) -> Self {
        NeffRequest {
            params,
            mean_neff,
            samples: 100_000,
            bins: 512,
            resolution: 4097,
            truncate: true,
            seed,
        }
    }
}

pub trait NeffModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn kind(&self) -> NeffKind;
    fn build(&self, request: &NeffRequest) -> Result<NeffDistribution>;
}

pub struct MonteCarloEmpirical;
pub struct GaussianApprox;

impl NeffModel for MonteCarloEmpirical {
    fn name(&self) -> &'static str {
        "monte_carlo_empirical"
    }

    fn kind(&self) -> NeffKind {
        NeffKind::MonteCarloEmpirical
    }

    fn build(&self, req: &NeffRequest) -> Result<NeffDistribution> {
        ensure_positive("mean_neff", req.mean_neff)?;
        if req.samples < 2 || req.bins == 0 {
            return Err(Error::invalid("samples", "need at least 2 samples and 1 bin"));
        }
        let region = SamplingBox::for_params(&req.params);
        let density = region.density_for_mean(&req.params, req.mean_neff);
        let mut samples = sample_neff(&req.params, density, &region, req.samples, req.seed)?;
        samples.sort_by(f64::total_cmp);
        let m = req.mean_neff;
        let max_sample = samples[samples.len() - 1];
        let upper = (m + 6.0 * (3.0 * m / 8.0).sqrt()).max(max_sample * (1.0 + 1e-12));
        let width = upper / req.bins as f64;
        let mut counts = vec![0usize; req.bins];
        for &s in &samples {
            let idx = ((s / width) as usize).min(req.bins - 1);
            counts[idx] += 1;
        }
        let n = samples.len() as f64;
        let nodes = (0..req.bins).map(|i| (i as f64 + 0.5) * width).collect();
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let density = weights.iter().map(|w| w / width).collect();
        Ok(NeffDistribution {
            mean_neff: m,
            kind: NeffKind::MonteCarloEmpirical,
            nodes,
            density,
            weights,
            normalization: 1.0 / (n * width),
            truncated: true,
            samples: Some(samples),
        })
    }
}

impl NeffModel for GaussianApprox {
    fn name(&self) -> &'static str {
        "gaussian_approx"
    }

    fn kind(&self) -> NeffKind {
        NeffKind::GaussianApprox
    }

    fn build(&self, req: &NeffRequest) -> Result<NeffDistribution> {
        ensure_positive("mean_neff", req.mean_neff)?;
        if req.resolution < 3 {
            return Err(Error::invalid("resolution", "need at least 3 nodes"));
        }
        let m = req.mean_neff;
        let sigma = (3.0 * m / 8.0).sqrt();
        let span = 12.0 * sigma;
        let lo = if req.truncate { (m - span).max(0.0) } else { m - span };
        let hi = m + span;
        // ∫ exp[−(4/3)(N−m)²/m] over the support
        let full = sigma * (2.0 * PI).sqrt();
        let mass = if req.truncate {
            full * 0.5 * (1.0 + erf(m / (sigma * 2f64.sqrt())))
        } else {
            full
        };
        let normalization = 1.0 / mass;
        let n = req.resolution;
        let h = (hi - lo) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let density: Vec<f64> = nodes
            .iter()
            .map(|&x| normalization * (-(4.0 / 3.0) * (x - m) * (x - m) / m).exp())
            .collect();
        let weights = density
            .iter()
            .enumerate()
            .map(|(i, &d)| if i == 0 || i == n - 1 { 0.5 * h * d } else { h * d })
            .collect();
        Ok(NeffDistribution {
            mean_neff: m,
            kind: NeffKind::GaussianApprox,
            nodes,
            density,
            weights,
            normalization,
            truncated: req.truncate,
            samples: None,
        })
    }
}

pub fn neff_models() -> &'static Registry<dyn NeffModel> {
    static REG: OnceLock<Registry<dyn NeffModel>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn NeffModel>::new("neff_model", "monte_carlo_empirical")
            .register(
                "monte_carlo_empirical",
                "histogram and raw samples from direct Monte Carlo over atom positions",
                |_| Box::new(MonteCarloEmpirical),
            )
            .register(
                "gaussian_approx",
                "Gaussian with Var/mean = 3/8, truncated at zero and renormalized",
                |_| Box::new(GaussianApprox),
            )
    })
}

/// Builds the distribution for `kind` through the registry.
pub fn neff_distribution(kind: NeffKind, request: &NeffRequest) -> Result<NeffDistribution> {
    let name = match kind {
        NeffKind::MonteCarloEmpirical => "monte_carlo_empirical",
        NeffKind::GaussianApprox => "gaussian_approx",
    };
    neff_models().build(name, &())?.build(request)
}

/// Common-random-number ensemble giving E[f(N_eff)] at any mean up to `max_mean`.
///
/// Each stored configuration is drawn at `max_mean`; every atom carries a
/// uniform label and a configuration at mean m keeps the atoms with label
/// below m/max_mean. Independent thinning of a Poisson process is again
/// Poisson, so each thinned configuration has the exact N_eff law at mean m,
/// and the ensemble average varies smoothly with m.
#[derive(Debug, Clone)]
pub struct NeffEnsemble {
    max_mean: f64,
    labels: Vec<Vec<f64>>,
    prefix: Vec<Vec<f64>>,
}

impl NeffEnsemble {
    pub fn new(params: &PhysicalParams, max_mean: f64, configs: usize, seed: u64) -> Result<Self> {
        ensure_positive("max_mean", max_mean)?;
        let region = SamplingBox::for_params(params);
        let atoms_mean = region.density_for_mean(params, max_mean) * region.volume();
        let chunks = configs.div_ceil(CHUNK);
        let parts: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng::stream(seed, c as u64);
                let len = CHUNK.min(configs - c * CHUNK);
                (0..len)
                    .map(|_| {
                        let n = atom_count(atoms_mean, &mut rng);
                        let mut atoms: Vec<(f64, f64)> = (0..n)
                            .map(|_| {
                                let w = mode_weight(region.draw_position(&mut rng), params);
                                (rng.random::<f64>(), w)
                            })
                            .collect();
                        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
                        let labels = atoms.iter().map(|a| a.0).collect();
                        let prefix = atoms
                            .iter()
                            .scan(0.0, |acc, a| {
                                *acc += a.1;
                                Some(*acc)
                            })
                            .collect();
                        (labels, prefix)
                    })
                    .collect()
            })
            .collect();
        let (labels, prefix) = parts.into_iter().flatten().unzip();
        Ok(NeffEnsemble {
            max_mean,
            labels,
            prefix,
        })
    }

    pub fn max_mean(&self) -> f64 {
        self.max_mean
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// N_eff of every stored configuration thinned to mean `mean`.
    pub fn samples_at(&self, mean: f64) -> impl Iterator<Item = f64> + '_ {
        let u = (mean / self.max_mean).clamp(0.0, 1.0);
        self.labels.iter().zip(&self.prefix).map(move |(l, p)| {
            let k = l.partition_point(|&x| x < u);
            if k == 0 {
                0.0
            } else {
                p[k - 1]
            }
        })
    }

    pub fn expectation(&self, mean: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.samples_at(mean).map(f).sum::<f64>() / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const P: PhysicalParams = PhysicalParams::RB87_MICROCAVITY;

    #[test]
    fn ratio_error_ignores_order_and_matches_replicate_spread() {
        use rand::Rng;
        let draw = |seed: u64| -> Vec<f64> {
            let mut rng = rng::stream(seed, 0);
            (0..2000).map(|_| -rng.random::<f64>().ln()).collect()
        };
        let mut xs = draw(1);
        let a = NeffMoments::from_samples(&xs).unwrap();
        xs.sort_by(f64::total_cmp);
        let b = NeffMoments::from_samples(&xs).unwrap();
        assert_relative_eq!(a.ratio_stderr, b.ratio_stderr, max_relative = 1e-9);

        let reps: Vec<NeffMoments> = (0..400).map(|s| NeffMoments::from_samples(&draw(s)).unwrap()).collect();
        let ratios: Vec<f64> = reps.iter().map(|m| m.ratio).collect();
        let spread = mean_var(&ratios).1.sqrt();
        let typical = reps.iter().map(|m| m.ratio_stderr).sum::<f64>() / reps.len() as f64;
        assert!((spread / typical - 1.0).abs() < 0.15, "{spread} vs {typical}");
    }

    #[test]
    fn default_box_is_valid_and_whole_half_waves() {
        let b = SamplingBox::for_params(&P);
        b.validate_for(&P).unwrap();
        assert_relative_eq!(b.axial_length, 356.0 * 0.39, max_relative = 1e-12);
        // radial tail beyond 4w is negligible
        let ideal = std::f64::consts::PI * P.waist * P.waist * b.axial_length / 4.0;
        assert_relative_eq!(b.mode_integral(&P), ideal, max_relative = 1e-13);
    }

    #[test]
    fn undersized_boxes_rejected() {
        let narrow = SamplingBox {
            half_width: 3.0 * P.waist,
            axial_length: 0.39 * 10.0,
        };
        assert!(matches!(narrow.validate_for(&P), Err(Error::BoxTooSmall(_))));
        let fractional = SamplingBox {
            half_width: 4.0 * P.waist,
            axial_length: 0.39 * 10.5,
        };
        assert!(matches!(fractional.validate_for(&P), Err(Error::BoxTooSmall(_))));
        assert!(sample_configuration_seeded(&P, 1e-3, &narrow, 1).is_err());
    }

    #[test]
    fn zero_density_gives_empty_configuration() {
        let b = SamplingBox::for_params(&P);
        let c = sample_configuration_seeded(&P, 0.0, &b, 3).unwrap();
        assert!(c.positions.is_empty());
        assert_eq!(c.neff, 0.0);
        assert_eq!(c.collective_coupling, 0.0);
    }

    #[test]
    fn stored_neff_is_recomputable_exactly() {
        let b = SamplingBox::for_params(&P);
        for seed in 0..20 {
            let c = sample_configuration_seeded(&P, 5e-4, &b, seed).unwrap();
            assert_eq!(c.recompute_neff(&P), c.neff);
            assert_eq!(c.collective_coupling, c.neff.sqrt());
            for r in &c.positions {
                assert!(r[0].abs() <= b.half_width && r[1].abs() <= b.half_width);
                assert!((0.0..=b.axial_length).contains(&r[2]));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_for_any_thread_count() {
        let b = SamplingBox::for_params(&P);
        let rho = b.density_for_mean(&P, 0.7);
        let a = sample_neff(&P, rho, &b, 5000, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| sample_neff(&P, rho, &b, 5000, 11).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn gaussian_normalization_limits() {
        for m in [0.5, 1.24, 8.0, 400.0] {
            let d = GaussianApprox.build(&NeffRequest::new(P, m, 0)).unwrap();
            assert!((d.total_probability() - 1.0).abs() < 1e-6);
            assert!(d.density.iter().all(|&p| p >= 0.0));
            let limit = 2.0 / (3.0 * std::f64::consts::PI * m).sqrt();
            if m >= 400.0 {
                assert_relative_eq!(d.normalization, limit, max_relative = 1e-12);
            } else if m >= 8.0 {
                assert_relative_eq!(d.normalization, limit, max_relative = 1e-5);
            }
        }
        let mut req = NeffRequest::new(P, 1.24, 0);
        req.truncate = false;
        let d = GaussianApprox.build(&req).unwrap();
        assert_relative_eq!(d.variance() / d.mean(), 0.375, max_relative = 1e-9);
    }

    #[test]
    fn non_positive_mean_is_rejected() {
        for kind in [NeffKind::GaussianApprox, NeffKind::MonteCarloEmpirical] {
            assert!(neff_distribution(kind, &NeffRequest::new(P, 0.0, 0)).is_err());
            assert!(neff_distribution(kind, &NeffRequest::new(P, -1.0, 0)).is_err());
        }
    }

    #[test]
    fn empirical_density_integrates_to_one() {
        let mut req = NeffRequest::new(P, 1.24, 5);
        req.samples = 20_000;
        let d = MonteCarloEmpirical.build(&req).unwrap();
        assert!((d.total_probability() - 1.0).abs() < 1e-12);
        let quad = d.expectation(|x| x * x);
        let raw = d.sample_expectation(|x| x * x).unwrap();
        // midpoint rule error on a 512-bin histogram
        assert!((quad - raw).abs() / raw < 1e-3);
    }

    #[test]
    fn ensemble_thinning_matches_direct_moments() {
        let ens = NeffEnsemble::new(&P, 2.0, 40_000, 9).unwrap();
        for m in [0.3, 1.0, 2.0] {
            let samples: Vec<f64> = ens.samples_at(m).collect();
            let (mean, var) = mean_var(&samples);
            let se = (var / samples.len() as f64).sqrt();
            assert!((mean - m).abs() < 4.0 * se, "mean {mean} vs {m}");
            assert!((var / mean - 0.375).abs() < 0.02);
        }
        assert_eq!(ens.expectation(0.0, |x| x), 0.0);
    }
}
