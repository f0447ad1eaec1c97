//! Photon-count statistics: g²(τ), variance-to-mean ratios and noise predictions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, ensure_probability, Error, Result};
use crate::neff::NeffDistribution;
use crate::params::PhysicalParams;
use crate::quantum::Estimate;
use crate::rng;
use crate::signal::{reflection_ratio, DriveConfig};

/// Binned photon counts, trials × bins, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountStream {
    bin_width_ns: u64,
    trials: usize,
    bins: usize,
    counts: Vec<u64>,
}

impl CountStream {
    /// `bin_width` in µs; it is stored at 1 ns resolution so streams compare exactly.
    pub fn new(bin_width: f64, trials: usize, bins: usize, counts: Vec<u64>) -> Result<Self> {
        ensure_positive("bin_width", bin_width)?;
        let ns = (bin_width * 1000.0).round();
        if ns < 1.0 || ((ns / 1000.0) - bin_width).abs() > 1e-9 * bin_width.max(1.0) {
            return Err(Error::invalid(
                "bin_width",
                format!("{bin_width} µs is not a whole number of nanoseconds"),
            ));
        }
        if counts.len() != trials * bins {
            return Err(Error::invalid(
                "counts",
                format!("{} values for {trials} trials × {bins} bins", counts.len()),
            ));
        }
        Ok(CountStream {
            bin_width_ns: ns as u64,
            trials,
            bins,
            counts,
        })
    }

    pub fn single(bin_width: f64, counts: Vec<u64>) -> Result<Self> {
        let n = counts.len();
        Self::new(bin_width, 1, n, counts)
    }

    /// Bin width, µs.
    pub fn bin_width(&self) -> f64 {
        self.bin_width_ns as f64 / 1000.0
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn trial(&self, i: usize) -> &[u64] {
        &self.counts[i * self.bins..(i + 1) * self.bins]
    }

    /// Bins `start..start+len` of every trial.
    pub fn segment(&self, start: usize, len: usize) -> Result<CountStream> {
        if start + len > self.bins || len == 0 {
            return Err(Error::invalid(
                "segment",
                format!("bins {start}..{} outside 0..{}", start + len, self.bins),
            ));
        }
        let counts = (0..self.trials)
            .flat_map(|i| self.trial(i)[start..start + len].iter().copied())
            .collect();
        Ok(CountStream {
            bin_width_ns: self.bin_width_ns,
            trials: self.trials,
            bins: len,
            counts,
        })
    }

    /// Ensemble mean count per bin.
    pub fn mean_per_bin(&self) -> Vec<f64> {
        let n = self.trials.max(1) as f64;
        (0..self.bins)
            .map(|b| {
                (0..self.trials)
                    .map(|i| self.counts[i * self.bins + b] as f64)
                    .sum::<f64>()
                    / n
            })
            .collect()
    }
}

/// One point of an estimated correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Point {
    pub lag: usize,
    pub tau_us: f64,
    pub g2: f64,
    pub stderr: f64,
}

const SINGLE_TRIAL_BLOCKS: usize = 10;

fn trial_g2(k: &[u64], max_lag: usize) -> Option<Vec<f64>> {
    let n = k.len();
    let mean = k.iter().sum::<u64>() as f64 / n as f64;
    if mean == 0.0 {
        return None;
    }
    Some(
        (0..=max_lag)
            .map(|tau| {
                let m = n - tau;
                let s: f64 = (0..m).map(|t| (k[t] * k[t + tau]) as f64).sum();
                s / m as f64 / (mean * mean)
            })
            .collect(),
    )
}

/// g²(τ) = mean[k(t)k(t+τ)]/mean[k(t)]² within each trial, averaged over trials.
///
/// τ = 0 includes the shot-noise self term. Standard errors come from the
/// spread across trials, or across ten contiguous blocks for a single trial.
pub fn g2_estimate(stream: &CountStream, max_lag: usize) -> Result<Vec<G2Point>> {
    if stream.trials() == 0 || stream.bins() == 0 {
        return Err(Error::EmptyInput("empty count stream".into()));
    }
    let units: Vec<&[u64]> = if stream.trials() >= 2 {
        (0..stream.trials()).map(|i| stream.trial(i)).collect()
    } else {
        let b = stream.bins() / SINGLE_TRIAL_BLOCKS;
        if b <= max_lag {
            return Err(Error::invalid(
                "max_lag",
                format!(
                    "single-trial stream of {} bins is too short for lag {max_lag}",
                    stream.bins()
                ),
            ));
        }
        stream.trial(0).chunks_exact(b).collect()
    };
    if max_lag >= units[0].len() {
        return Err(Error::invalid(
            "max_lag",
            format!(
                "lag {max_lag} is not shorter than the segment ({} bins)",
                units[0].len()
            ),
        ));
    }
    let per: Vec<Vec<f64>> = units.iter().filter_map(|k| trial_g2(k, max_lag)).collect();
    if per.is_empty() {
        return Err(Error::Undefined("zero mean count".into()));
    }
    let bw = stream.bin_width();
    Ok((0..=max_lag)
        .map(|lag| {
            let xs: Vec<f64> = per.iter().map(|v| v[lag]).collect();
            let e = Estimate::from_samples(&xs);
            G2Point {
                lag,
                tau_us: lag as f64 * bw,
                g2: e.value,
                stderr: e.stderr,
            }
        })
        .collect())
}

/// Per-bin ensemble Var/mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub bin: usize,
    pub t_us: f64,
    pub mean: f64,
    pub variance: f64,
    /// Var/mean; NaN where no counts were recorded.
    pub ratio: f64,
    pub stderr: f64,
}

fn ratio_with_error(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        c2 += d * d;
        c3 += d * d * d;
        c4 += d * d * d * d;
    }
    let var = c2 / (n - 1.0);
    let (mu2, mu3, mu4) = (c2 / n, c3 / n, c4 / n);
    if m == 0.0 {
        return (m, var, f64::NAN, f64::NAN);
    }
    let r = var / m;
    let var_s2 = ((mu4 - mu2 * mu2 * (n - 3.0) / (n - 1.0)) / n).max(0.0);
    let var_m = mu2 / n;
    let cov = mu3 / n;
    let var_r = var_s2 / (m * m) + var * var * var_m / m.powi(4) - 2.0 * var * cov / m.powi(3);
    (m, var, r, var_r.max(0.0).sqrt())
}

/// Ensemble Var(k)/⟨k⟩ for every bin, optionally smoothed by a centred boxcar of `window` bins.
pub fn variance_to_mean(stream: &CountStream, window: Option<usize>) -> Result<Vec<VariancePoint>> {
    if stream.trials() < 2 {
        return Err(Error::invalid("trials", "variance needs at least 2 trials"));
    }
    let bw = stream.bin_width();
    let raw: Vec<VariancePoint> = (0..stream.bins())
        .map(|b| {
            let xs: Vec<f64> = (0..stream.trials())
                .map(|i| stream.counts()[i * stream.bins() + b] as f64)
                .collect();
            let (mean, variance, ratio, stderr) = ratio_with_error(&xs);
            VariancePoint {
                bin: b,
                t_us: (b as f64 + 0.5) * bw,
                mean,
                variance,
                ratio,
                stderr,
            }
        })
        .collect();
    let Some(w) = window.filter(|&w| w > 1) else {
        return Ok(raw);
    };
    let half = w / 2;
    Ok((0..raw.len())
        .map(|b| {
            let lo = b.saturating_sub(half);
            let hi = (b + w - half).min(raw.len());
            let pts: Vec<&VariancePoint> = raw[lo..hi].iter().filter(|p| p.ratio.is_finite()).collect();
            let n = pts.len() as f64;
            let (ratio, stderr) = if pts.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    pts.iter().map(|p| p.ratio).sum::<f64>() / n,
                    (pts.iter().map(|p| p.stderr * p.stderr).sum::<f64>()).sqrt() / n,
                )
            };
            VariancePoint {
                ratio,
                stderr,
                ..raw[b]
            }
        })
        .collect())
}

/// Var(k)/⟨k⟩ pooled over all bins of a stationary stream, with a
/// delete-one-trial jackknife error (trials are independent, bins need not be).
pub fn pooled_variance_to_mean(stream: &CountStream) -> Result<Estimate> {
    let n = stream.trials();
    if n < 2 {
        return Err(Error::invalid("trials", "variance needs at least 2 trials"));
    }
    let sums: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            stream
                .trial(i)
                .iter()
                .fold((0.0, 0.0), |(a, b), &k| (a + k as f64, b + (k * k) as f64))
        })
        .collect();
    let per = stream.bins() as f64;
    let ratio_of = |s1: f64, s2: f64, count: f64| {
        let m = s1 / count;
        let var = (s2 - count * m * m) / (count - 1.0);
        var / m
    };
    let (t1, t2) = sums.iter().fold((0.0, 0.0), |(a, b), s| (a + s.0, b + s.1));
    if t1 == 0.0 {
        return Err(Error::Undefined("zero mean count".into()));
    }
    let full = ratio_of(t1, t2, n as f64 * per);
    let jack: Vec<f64> = sums
        .iter()
        .map(|s| ratio_of(t1 - s.0, t2 - s.1, (n - 1) as f64 * per))
        .collect();
    let jm = jack.iter().sum::<f64>() / n as f64;
    let jv = jack.iter().map(|j| (j - jm) * (j - jm)).sum::<f64>() * (n as f64 - 1.0) / n as f64;
    Ok(Estimate {
        value: full,
        stderr: jv.sqrt(),
    })
}

/// 1 + α·Var(N)/⟨N⟩ for a linear per-atom yield α.
pub fn mandel_linear_prediction(alpha: f64, var_over_mean_n: f64) -> Result<f64> {
    ensure_non_negative("alpha", alpha)?;
    ensure_non_negative("var_over_mean_n", var_over_mean_n)?;
    Ok(1.0 + alpha * var_over_mean_n)
}

/// Detection chain for the intracavity-photon form of the noise prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Collection efficiency from fibre to detector ε.
    pub collection: f64,
    /// Fibre coupling ξ.
    pub fibre: f64,
    /// κ/2π, MHz.
    pub kappa: f64,
    /// Counting bin T, µs.
    pub bin_width: f64,
    /// Mean detected photons per bin for one maximally coupled atom α.
    pub per_atom_yield: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        ensure_probability("collection", self.collection)?;
        ensure_probability("fibre", self.fibre)?;
        ensure_positive("kappa", self.kappa)?;
        ensure_positive("bin_width", self.bin_width)?;
        ensure_non_negative("per_atom_yield", self.per_atom_yield)
    }

    /// Detected count rate per intracavity photon, 2κξε, µs⁻¹.
    pub fn photon_to_rate(&self) -> f64 {
        2.0 * 2.0 * std::f64::consts::PI * self.kappa * self.fibre * self.collection
    }
}

/// How expectations over N_eff are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Quadrature over the tabulated density.
    Quadrature,
    /// Mean over the raw Monte Carlo samples.
    RawSamples,
}

fn moments(dist: &NeffDistribution, f: &dyn Fn(f64) -> f64, how: Averaging) -> Result<(f64, f64)> {
    let check = |x: f64, r: f64| -> Result<()> {
        if !r.is_finite() || r < 0.0 {
            Err(Error::DomainMismatch(format!("rate map gives {r} at N_eff = {x}")))
        } else {
            Ok(())
        }
    };
    match how {
        Averaging::Quadrature => {
            for &x in &dist.nodes {
                check(x, f(x))?;
            }
            let total = dist.total_probability();
            let mean = dist.expectation(f) / total;
            Ok((mean, dist.expectation(|x| (f(x) - mean).powi(2)) / total))
        }
        Averaging::RawSamples => {
            let s = dist
                .samples
                .as_ref()
                .ok_or_else(|| Error::DomainMismatch("distribution carries no raw samples".into()))?;
            let vals: Vec<f64> = s.iter().map(|&x| f(x)).collect();
            for (&x, &r) in s.iter().zip(&vals) {
                check(x, r)?;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            Ok((mean, vals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n))
        }
    }
}

/// Var(k)/⟨k⟩ = 1 + T·Var(R)/⟨R⟩ for a detected rate map R(N_eff) in counts/µs.
pub fn nonlinear_noise_prediction(
    dist: &NeffDistribution,
    rate_map: &dyn Fn(f64) -> f64,
    model: &NoiseModel,
    how: Averaging,
) -> Result<f64> {
    model.validate()?;
    let (mean, var) = moments(dist, rate_map, how)?;
    if mean <= 0.0 {
        return Err(Error::Undefined("mean detected rate is zero".into()));
    }
    Ok(1.0 + model.bin_width * var / mean)
}

/// Var(k)/⟨k⟩ = 1 + 2κTξε·Var(n)/⟨n⟩ from the intracavity photon number map n(N_eff).
pub fn photon_noise_prediction(
    dist: &NeffDistribution,
    photon_map: &dyn Fn(f64) -> f64,
    model: &NoiseModel,
    how: Averaging,
) -> Result<f64> {
    model.validate()?;
    let (mean, var) = moments(dist, photon_map, how)?;
    if mean <= 0.0 {
        return Err(Error::Undefined("mean photon number is zero".into()));
    }
    Ok(1.0 + model.photon_to_rate() * model.bin_width * var / mean)
}

/// Reflection and fluorescence noise predictions at equal mean atom-induced counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedComparison {
    pub fluorescence: f64,
    pub reflection: f64,
    /// Detected probe photons per bin εJ_in·T giving the matched reflection signal.
    pub reflection_probe_per_bin: f64,
    /// Mean atom-induced counts per bin in either scheme.
    pub signal_per_bin: f64,
}

/// Compares the two schemes at the same ⟨N_eff⟩ and the same mean atom-induced
/// signal, given the fluorescence detected-count map per bin.
pub fn matched_signal_comparison(
    dist: &NeffDistribution,
    c1: f64,
    fringe_amplitude: f64,
    fluorescence_counts: &dyn Fn(f64) -> f64,
) -> Result<MatchedComparison> {
    let (fm, fv) = moments(dist, fluorescence_counts, Averaging::Quadrature)?;
    let refl = |n: f64| reflection_ratio(c1 * n, fringe_amplitude);
    let (rm, rv) = moments(dist, &refl, Averaging::Quadrature)?;
    let excess = rm - fringe_amplitude * fringe_amplitude;
    if fm <= 0.0 || excess <= 0.0 {
        return Err(Error::Undefined("no atom-induced signal to match".into()));
    }
    let probe = fm / excess;
    Ok(MatchedComparison {
        fluorescence: 1.0 + fv / fm,
        reflection: 1.0 + probe * rv / rm,
        reflection_probe_per_bin: probe,
        signal_per_bin: fm,
    })
}

/// Settings for the single-transit correlation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitTheory {
    /// Time to cross 2w, µs.
    pub transit_time_us: f64,
    pub bin_width_us: f64,
    pub max_lag: usize,
    /// Monte Carlo transits averaged.
    pub samples: usize,
    /// Impact parameters are uniform within ± this many waists.
    pub radial_waists: f64,
    pub seed: u64,
}

impl TransitTheory {
    pub fn new(transit_time_us: f64, bin_width_us: f64, max_lag: usize) -> Self {
        TransitTheory {
            transit_time_us,
            bin_width_us,
            max_lag,
            samples: 4000,
            radial_waists: 4.0,
            seed: 0x7a11,
        }
    }
}

/// Normalized bin-level autocorrelation S(m)/S(0) of the reflected flux change
/// produced by one atom crossing the mode at uniform speed.
///
/// Each transit has a uniform impact parameter and standing-wave phase, and a
/// uniformly random offset of the bin grid, so the bin-integration kernel is
/// averaged exactly.
pub fn g2_transit_shape(params: &PhysicalParams, drive: &DriveConfig, theory: &TransitTheory) -> Result<Vec<f64>> {
    params.validate()?;
    drive.validate()?;
    ensure_positive("transit_time_us", theory.transit_time_us)?;
    ensure_positive("bin_width_us", theory.bin_width_us)?;
    if theory.samples == 0 {
        return Err(Error::invalid("samples", "need at least one transit"));
    }
    let c1 = params.cooperativity().c1;
    let b = drive.fringe_amplitude;
    let tt = theory.transit_time_us;
    let bw = theory.bin_width_us;
    let span = 2.0 * tt;
    let nbins = (2.0 * span / bw).ceil() as usize + 2;
    let sub = 8;
    let mut rng = rng::stream(theory.seed, 0);
    let mut corr = vec![0.0; theory.max_lag + 1];
    let mut binned = vec![0.0; nbins];
    for _ in 0..theory.samples {
        let y: f64 = rng.random_range(-theory.radial_waists..theory.radial_waists);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let offset: f64 = rng.random_range(0.0..bw);
        let w0 = phase.sin().powi(2) * (-2.0 * y * y).exp();
        for (i, slot) in binned.iter_mut().enumerate() {
            let start = -span - offset + i as f64 * bw;
            let mut acc = 0.0;
            for s in 0..sub {
                let t = start + (s as f64 + 0.5) * bw / sub as f64;
                let n = w0 * (-8.0 * t * t / (tt * tt)).exp();
                acc += reflection_ratio(c1 * n, b) - b * b;
            }
            *slot = acc / sub as f64;
        }
        for (m, c) in corr.iter_mut().enumerate() {
            *c += (0..nbins.saturating_sub(m))
                .map(|i| binned[i] * binned[i + m])
                .sum::<f64>();
        }
    }
    let c0 = corr[0];
    if c0 <= 0.0 {
        return Ok(vec![0.0; corr.len()]);
    }
    Ok(corr.iter().map(|c| c / c0).collect())
}

/// g²(τ) = 1 + amplitude·S(τ)/S(0) on lags 0..=max_lag.
pub fn g2_transit_theory(
    params: &PhysicalParams,
    drive: &DriveConfig,
    theory: &TransitTheory,
    amplitude: f64,
) -> Result<Vec<(f64, f64)>> {
    let shape = g2_transit_shape(params, drive, theory)?;
    Ok(shape
        .iter()
        .enumerate()
        .map(|(m, s)| (m as f64 * theory.bin_width_us, 1.0 + amplitude * s))
        .collect())
}

/// Weighted least-squares amplitude of g² − 1 against a theory shape, using lags ≥ 1
/// (lag 0 carries the shot-noise self term).
pub fn fit_g2_amplitude(measured: &[G2Point], shape: &[f64]) -> Result<Estimate> {
    let (mut num, mut den) = (0.0, 0.0);
    for p in measured.iter().filter(|p| p.lag >= 1 && p.lag < shape.len()) {
        let w = if p.stderr > 0.0 {
            1.0 / (p.stderr * p.stderr)
        } else {
            1.0
        };
        num += w * (p.g2 - 1.0) * shape[p.lag];
        den += w * shape[p.lag] * shape[p.lag];
    }
    if den <= 0.0 {
        return Err(Error::Undefined("theory shape vanishes on the fitted lags".into()));
    }
    Ok(Estimate {
        value: num / den,
        stderr: (1.0 / den).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neff::{GaussianApprox, NeffModel, NeffRequest};
    use rand_distr::{Distribution, Poisson};

    fn poisson_stream(rate: f64, trials: usize, bins: usize, seed: u64) -> CountStream {
        let mut rng = rng::stream(seed, 0);
        let p = Poisson::new(rate).unwrap();
        let counts = (0..trials * bins).map(|_| p.sample(&mut rng) as u64).collect();
        CountStream::new(1.0, trials, bins, counts).unwrap()
    }

    #[test]
    fn stream_shape_checks() {
        assert!(CountStream::new(1.0, 2, 3, vec![0; 5]).is_err());
        assert!(CountStream::new(0.0, 1, 1, vec![0]).is_err());
        let s = CountStream::new(2.0, 2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(s.trial(1), &[4, 5, 6]);
        assert_eq!(s.segment(1, 2).unwrap().counts(), &[2, 3, 5, 6]);
        assert_eq!(s.mean_per_bin(), vec![2.5, 3.5, 4.5]);
    }

    #[test]
    fn g2_of_poisson_is_one() {
        let s = poisson_stream(3.0, 40, 500, 1);
        let g = g2_estimate(&s, 5).unwrap();
        for p in &g[1..] {
            assert!((p.g2 - 1.0).abs() < 3.5 * p.stderr, "{p:?}");
        }
        // self term: 1 + 1/mean
        assert!((g[0].g2 - (1.0 + 1.0 / 3.0)).abs() < 4.0 * g[0].stderr);
        assert!(g2_estimate(&CountStream::new(1.0, 2, 10, vec![0; 20]).unwrap(), 2).is_err());
    }

    #[test]
    fn g2_of_square_wave() {
        // bursts of 4 bins at 2 counts then 4 empty bins
        let pattern: Vec<u64> = (0..800).map(|t| if (t / 4) % 2 == 0 { 2 } else { 0 }).collect();
        let s = CountStream::single(1.0, pattern.clone()).unwrap();
        let g = g2_estimate(&s, 16).unwrap();
        let direct = |tau: usize| {
            let block = &pattern[..80];
            let n = 80 - tau;
            let m = block.iter().sum::<u64>() as f64 / 80.0;
            (0..n).map(|t| (block[t] * block[t + tau]) as f64).sum::<f64>() / n as f64 / (m * m)
        };
        for tau in [0, 4, 8, 12] {
            assert!((g[tau].g2 - direct(tau)).abs() < 1e-12);
        }
        assert!(g[8].g2 > g[4].g2);
        assert!(g[0].g2 >= g[8].g2);
    }

    #[test]
    fn variance_ratio_behaviour() {
        let same = CountStream::new(1.0, 5, 3, vec![2; 15]).unwrap();
        assert!(variance_to_mean(&same, None).unwrap().iter().all(|p| p.ratio == 0.0));
        let s = poisson_stream(4.0, 300, 50, 3);
        let v = variance_to_mean(&s, None).unwrap();
        let bad = v.iter().filter(|p| (p.ratio - 1.0).abs() > 3.0 * p.stderr).count();
        assert!(bad <= 3, "{bad} of 50 bins outside 3σ");
        let smooth = variance_to_mean(&s, Some(10)).unwrap();
        assert_eq!(smooth.len(), 50);
        let pooled = pooled_variance_to_mean(&s).unwrap();
        assert!((pooled.value - 1.0).abs() < 3.0 * pooled.stderr);
        assert!(variance_to_mean(&CountStream::new(1.0, 1, 3, vec![1; 3]).unwrap(), None).is_err());
    }

    #[test]
    fn noise_predictions() {
        assert_eq!(mandel_linear_prediction(0.42, 1.0).unwrap(), 1.42);
        assert_eq!(mandel_linear_prediction(0.0, 0.375).unwrap(), 1.0);
        let p = PhysicalParams::RB87_MICROCAVITY;
        let d = GaussianApprox.build(&NeffRequest::new(p, 1.24, 0)).unwrap();
        let model = NoiseModel {
            collection: 0.5,
            fibre: 0.5,
            kappa: 5200.0,
            bin_width: 1.0,
            per_atom_yield: 0.42,
        };
        let flat = nonlinear_noise_prediction(&d, &|_| 3.0, &model, Averaging::Quadrature).unwrap();
        assert_eq!(flat, 1.0);
        // linear map over a truncated Gaussian: 1 + α·Var/mean of that distribution
        let lin = nonlinear_noise_prediction(&d, &|n| 0.42 * n, &model, Averaging::Quadrature).unwrap();
        let want = 1.0 + 0.42 * d.variance() / d.mean();
        assert!((lin - want).abs() < 1e-12);
        assert!(matches!(
            nonlinear_noise_prediction(&d, &|n| n - 10.0, &model, Averaging::Quadrature),
            Err(Error::DomainMismatch(_))
        ));
        assert!(nonlinear_noise_prediction(&d, &|n| n, &model, Averaging::RawSamples).is_err());
        // photon form agrees with the rate form when R = 2κξε·n
        let k = model.photon_to_rate();
        let via_n = photon_noise_prediction(&d, &|n| 1e-6 * n * n, &model, Averaging::Quadrature).unwrap();
        let via_r = nonlinear_noise_prediction(&d, &|n| k * 1e-6 * n * n, &model, Averaging::Quadrature).unwrap();
        assert!((via_n - via_r).abs() < 1e-12);
    }

    #[test]
    fn transit_theory_shape() {
        let p = PhysicalParams::RB87_MICROCAVITY;
        let drive = DriveConfig {
            j_in: 1.0,
            fringe_amplitude: 0.5,
            saturation: 0.0,
            fibre_coupling: 1.0,
        };
        let th = TransitTheory::new(14.0, 2.0, 30);
        let flat = g2_transit_theory(&p, &drive, &th, 0.0).unwrap();
        assert!(flat.iter().all(|&(_, g)| g == 1.0));
        let g = g2_transit_theory(&p, &drive, &th, 0.2).unwrap();
        assert!(g[0].1 > g[7].1);
        assert!((g[30].1 - 1.0).abs() < 1e-6);
        assert!(g.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
    }
}
