//! Bright/dark state discrimination with a K-photon threshold.
//!
//! A bright atom produces counts at rate S + B, a dark one at B. Declaring
//! "bright" when at least K photons arrive in a window T gives
//!
//!   F_K = (1 − p)·Q(K, BT) + p·[1 − Q(K, (S + B)T)],
//!
//! with Q(K, x) = Γ(K, x)/(K − 1)! = P(Poisson(x) < K). Rates are in counts/ms
//! and times in µs.

use serde::{Deserialize, Serialize};

use crate::counting::CountStream;
use crate::error::{ensure_non_negative, ensure_probability, Error, Result};
use crate::special::{ln_gamma, poisson_tails, PoissonTail};

const MS_PER_US: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorRates {
    /// Single-atom signal rate S, counts/ms.
    pub signal: f64,
    /// Background rate B, counts/ms.
    pub background: f64,
    /// Prior probability that the atom is bright.
    pub prior: f64,
}

impl DetectorRates {
    pub fn new(signal: f64, background: f64, prior: f64) -> Result<Self> {
        let r = DetectorRates {
            signal,
            background,
            prior,
        };
        r.validate()?;
        Ok(r)
    }

    /// Equal priors.
    pub fn balanced(signal: f64, background: f64) -> Result<Self> {
        Self::new(signal, background, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("signal", self.signal)?;
        ensure_non_negative("background", self.background)?;
        ensure_probability("prior", self.prior)
    }

    fn dark_mean(&self, t_us: f64) -> f64 {
        self.background * t_us * MS_PER_US
    }

    fn bright_mean(&self, t_us: f64) -> f64 {
        (self.signal + self.background) * t_us * MS_PER_US
    }
}

fn check_k(k: u32) -> Result<()> {
    if k == 0 {
        Err(Error::invalid("k", "threshold must be at least 1"))
    } else {
        Ok(())
    }
}

/// Single-atom efficiency 1 − exp(−S·T).
pub fn efficiency(rates: &DetectorRates, t_us: f64) -> Result<f64> {
    rates.validate()?;
    ensure_non_negative("t", t_us)?;
    Ok(-(-rates.signal * t_us * MS_PER_US).exp_m1())
}

/// F_K(T) using the default Poisson-tail route.
pub fn fidelity(rates: &DetectorRates, k: u32, t_us: f64) -> Result<f64> {
    fidelity_with(poisson_tails().build_default(&()).as_ref(), rates, k, t_us)
}

/// F_K(T) using an explicit Poisson-tail strategy.
pub fn fidelity_with(tail: &dyn PoissonTail, rates: &DetectorRates, k: u32, t_us: f64) -> Result<f64> {
    Ok(confusion_with(tail, rates, k, t_us)?.fidelity())
}

/// Joint probabilities of (true state, identified state).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub dark_as_dark: f64,
    pub dark_as_bright: f64,
    pub bright_as_dark: f64,
    pub bright_as_bright: f64,
}

impl ConfusionTable {
    /// Sum of the correct identifications.
    pub fn fidelity(&self) -> f64 {
        self.dark_as_dark + self.bright_as_bright
    }

    pub fn dark_total(&self) -> f64 {
        self.dark_as_dark + self.dark_as_bright
    }

    pub fn bright_total(&self) -> f64 {
        self.bright_as_dark + self.bright_as_bright
    }
}

pub fn confusion_table(rates: &DetectorRates, k: u32, t_us: f64) -> Result<ConfusionTable> {
    confusion_with(poisson_tails().build_default(&()).as_ref(), rates, k, t_us)
}

fn confusion_with(tail: &dyn PoissonTail, rates: &DetectorRates, k: u32, t_us: f64) -> Result<ConfusionTable> {
    rates.validate()?;
    check_k(k)?;
    ensure_non_negative("t", t_us)?;
    let p = rates.prior;
    let dark_below = tail.below(k, rates.dark_mean(t_us));
    let bright_below = tail.below(k, rates.bright_mean(t_us));
    Ok(ConfusionTable {
        dark_as_dark: (1.0 - p) * dark_below,
        dark_as_bright: (1.0 - p) * (1.0 - dark_below),
        bright_as_dark: p * bright_below,
        bright_as_bright: p * (1.0 - bright_below),
    })
}

/// ln of the probability mass e^{−x}x^k/k!, with ln 0 = −∞.
fn ln_pmf(k: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -x + k as f64 * x.ln() - ln_gamma(k as f64 + 1.0)
}

/// Sign-determining form of dF_K/dT: ln[p(S+B)·pmf(K−1; (S+B)T)] − ln[(1−p)B·pmf(K−1; BT)].
fn slope_log_ratio(rates: &DetectorRates, k: u32, t_us: f64) -> f64 {
    let (s, b, p) = (rates.signal, rates.background, rates.prior);
    let gain = p.ln() + (s + b).ln() + ln_pmf(k - 1, rates.bright_mean(t_us));
    let loss = (1.0 - p).ln() + b.ln() + ln_pmf(k - 1, rates.dark_mean(t_us));
    gain - loss
}

/// Closed-form optimum T_K = [ln(p/(1−p)) + K·ln(1 + S/B)]/S in µs (may be ≤ 0).
pub fn optimal_time_closed_form(rates: &DetectorRates, k: u32) -> f64 {
    let (s, b, p) = (rates.signal, rates.background, rates.prior);
    ((p / (1.0 - p)).ln() + k as f64 * (1.0 + s / b).ln()) / (s * MS_PER_US)
}

/// Optimum window and fidelity (T_Kmax in µs, F_Kmax).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub t_us: f64,
    pub fidelity: f64,
}

/// Maximizes F_K over T by bisection on the sign of dF/dT.
pub fn optimal_time(rates: &DetectorRates, k: u32) -> Result<Optimum> {
    rates.validate()?;
    check_k(k)?;
    if rates.signal <= 0.0 {
        return Err(Error::Undefined("optimal time needs a positive signal rate".into()));
    }
    if rates.background <= 0.0 {
        return Err(Error::Undefined(
            "with zero background the fidelity increases without bound in T".into(),
        ));
    }
    if rates.prior <= 0.0 || rates.prior >= 1.0 {
        // a certain prior is best served by not measuring
        return Ok(Optimum {
            t_us: 0.0,
            fidelity: fidelity(rates, k, 0.0)?,
        });
    }
    let (s, b) = (rates.signal, rates.background);
    let scale = (1.0 + s / b).ln() / (s * MS_PER_US);
    let mut lo = 1e-12 * scale;
    if slope_log_ratio(rates, k, lo) <= 0.0 {
        return Ok(Optimum {
            t_us: 0.0,
            fidelity: fidelity(rates, k, 0.0)?,
        });
    }
    let mut hi = 10.0 * k as f64 * scale;
    let mut guard = 0;
    while slope_log_ratio(rates, k, hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NonConvergence {
                what: "optimal time bracket",
                residual: hi,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope_log_ratio(rates, k, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok(Optimum {
        t_us: t,
        fidelity: fidelity(rates, k, t)?,
    })
}

/// F_K sampled over a time grid together with its optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub k: u32,
    /// (T in µs, F_K).
    pub samples: Vec<(f64, f64)>,
    pub optimum: Optimum,
}

pub fn fidelity_curve(rates: &DetectorRates, k: u32, times_us: &[f64]) -> Result<FidelityCurve> {
    let samples = times_us
        .iter()
        .map(|&t| fidelity(rates, k, t).map(|f| (t, f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FidelityCurve {
        k,
        samples,
        optimum: optimal_time(rates, k)?,
    })
}

/// Fraction of labelled trials classified correctly with a binomial error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalFidelity {
    pub fidelity: f64,
    pub stderr: f64,
    pub n_trials: usize,
    /// Smallest possible step, 1/n_trials.
    pub resolution: f64,
    pub window_bins: usize,
}

/// Classifies each trial by the counts in its first ⌊T/bin⌋ bins.
pub fn fidelity_from_counts(bright: &CountStream, dark: &CountStream, k: u32, t_us: f64) -> Result<EmpiricalFidelity> {
    check_k(k)?;
    ensure_non_negative("t", t_us)?;
    let n = bright.trials() + dark.trials();
    if n == 0 {
        return Err(Error::EmptyInput("no labelled trials".into()));
    }
    if bright.trials() > 0 && dark.trials() > 0 && bright.bin_width() != dark.bin_width() {
        return Err(Error::invalid("bin_width", "bright and dark streams differ"));
    }
    let bw = if bright.trials() > 0 {
        bright.bin_width()
    } else {
        dark.bin_width()
    };
    let window = (t_us / bw + 1e-9).floor() as usize;
    if window == 0 {
        return Err(Error::invalid("t", format!("window {t_us} µs is shorter than one bin")));
    }
    for s in [bright, dark] {
        if s.trials() > 0 && window > s.bins() {
            return Err(Error::invalid("t", "window exceeds the recorded stream"));
        }
    }
    let window_sum = |s: &CountStream, i: usize| -> u64 { s.trial(i)[..window].iter().sum() };
    let correct_bright = (0..bright.trials())
        .filter(|&i| window_sum(bright, i) >= k as u64)
        .count();
    let correct_dark = (0..dark.trials()).filter(|&i| window_sum(dark, i) < k as u64).count();
    let f = (correct_bright + correct_dark) as f64 / n as f64;
    Ok(EmpiricalFidelity {
        fidelity: f,
        stderr: (f * (1.0 - f) / n as f64).sqrt(),
        n_trials: n,
        resolution: 1.0 / n as f64,
        window_bins: window,
    })
}

/// Single-atom signal S₁ extrapolated from a fluorescence rate measured at ⟨N_eff⟩,
/// scaling by the fluorescence lineshape evaluated at N_eff = 1 and at ⟨N_eff⟩.
pub fn extrapolate_single_atom_rate(measured: f64, mean_neff: f64, c1_prime: f64, saturation: f64) -> Result<f64> {
    ensure_non_negative("measured", measured)?;
    if mean_neff <= 0.0 {
        return Err(Error::invalid("mean_neff", "must be > 0"));
    }
    let shape = |c: f64| crate::signal::fluorescence_shape(c, saturation);
    let at_mean = shape(c1_prime * mean_neff);
    if at_mean == 0.0 {
        return Err(Error::Undefined("fluorescence vanishes at the measured point".into()));
    }
    Ok(measured * shape(c1_prime) / at_mean)
}

/// Published detector (S₁, B) pairs in counts/ms, used as comparison inputs.
pub const COMPARISON_RATES: [(&str, f64, f64); 7] = [
    ("Tep06", 5.6, 0.28),
    ("Wil06", 36.0, 0.311),
    ("Ter09", 54.5, 2.18),
    ("Koh09", 0.13, 0.05),
    ("Boc10", 94.0, 0.05),
    ("Geh10", 190.0, 1.4),
    ("fibre cavity", 420.0, 3.84),
];

/// One computed comparison row at p = ½.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub signal_per_ms: f64,
    pub background_per_ms: f64,
    pub f1_max: f64,
    pub t1_max_us: f64,
    pub f2_max: f64,
    pub t2_max_us: f64,
}

pub fn comparison_row(label: &str, signal: f64, background: f64) -> Result<ComparisonRow> {
    let r = DetectorRates::balanced(signal, background)?;
    let o1 = optimal_time(&r, 1)?;
    let o2 = optimal_time(&r, 2)?;
    Ok(ComparisonRow {
        label: label.to_string(),
        signal_per_ms: signal,
        background_per_ms: background,
        f1_max: o1.fidelity,
        t1_max_us: o1.t_us,
        f2_max: o2.fidelity,
        t2_max_us: o2.t_us,
    })
}

pub fn comparison_table() -> Result<Vec<ComparisonRow>> {
    COMPARISON_RATES
        .iter()
        .map(|&(l, s, b)| comparison_row(l, s, b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{IncompleteGamma, PoissonSum};
    use approx::assert_relative_eq;

    fn this_work() -> DetectorRates {
        DetectorRates::balanced(420.0, 3.84).unwrap()
    }

    #[test]
    fn efficiency_values() {
        let r = this_work();
        assert_relative_eq!(
            efficiency(&r, 10.0).unwrap(),
            1.0 - (-4.2f64).exp(),
            max_relative = 1e-14
        );
        assert_eq!(efficiency(&r, 0.0).unwrap(), 0.0);
        let z = DetectorRates::balanced(0.0, 1.0).unwrap();
        assert_eq!(efficiency(&z, 50.0).unwrap(), 0.0);
    }

    #[test]
    fn single_photon_formula() {
        let r = this_work();
        let t = 11.2;
        let (s, b) = (0.420, 0.00384);
        let direct = 0.5 * (-b * t as f64).exp() + 0.5 * (1.0 - (-(s + b) * t as f64).exp());
        assert_relative_eq!(fidelity(&r, 1, t).unwrap(), direct, max_relative = 1e-13);
        assert_eq!(fidelity(&r, 1, 0.0).unwrap(), 0.5);
        assert!(fidelity(&r, 0, 1.0).is_err());
    }

    #[test]
    fn optimum_matches_closed_form() {
        for &(_, s, b) in &COMPARISON_RATES {
            for k in 1..=3 {
                let r = DetectorRates::balanced(s, b).unwrap();
                let o = optimal_time(&r, k).unwrap();
                let want = k as f64 * (1.0 + s / b).ln() / (s * 1e-3);
                assert_relative_eq!(o.t_us, want, max_relative = 1e-9);
                assert_relative_eq!(optimal_time_closed_form(&r, k), want, max_relative = 1e-12);
            }
        }
        // asymmetric prior
        let r = DetectorRates::new(420.0, 3.84, 0.3).unwrap();
        let o = optimal_time(&r, 2).unwrap();
        assert_relative_eq!(o.t_us, optimal_time_closed_form(&r, 2), max_relative = 1e-9);
        assert!(optimal_time(&DetectorRates::balanced(0.0, 1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn optimum_is_a_scan_maximum() {
        let r = this_work();
        let o = optimal_time(&r, 2).unwrap();
        let best = (1..20000)
            .map(|i| i as f64 * 0.01)
            .map(|t| fidelity(&r, 2, t).unwrap())
            .fold(0.0, f64::max);
        assert!(o.fidelity >= best - 1e-12);
    }

    #[test]
    fn tail_routes_agree_in_fidelity() {
        let r = this_work();
        for t in [1.0, 11.2, 40.0, 300.0] {
            for k in 1..=5 {
                let a = fidelity_with(&IncompleteGamma, &r, k, t).unwrap();
                let b = fidelity_with(&PoissonSum, &r, k, t).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confusion_table_consistency() {
        let r = this_work();
        let c = confusion_table(&r, 1, 11.2).unwrap();
        assert_relative_eq!(c.dark_total(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(c.bright_total(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(c.fidelity(), fidelity(&r, 1, 11.2).unwrap(), max_relative = 1e-14);
        let zero = confusion_table(&r, 1, 0.0).unwrap();
        assert_eq!(zero.dark_as_bright + zero.bright_as_bright, 0.0);
        let no_bg = confusion_table(&DetectorRates::balanced(420.0, 0.0).unwrap(), 1, 30.0).unwrap();
        assert_eq!(no_bg.dark_as_bright, 0.0);
    }

    #[test]
    fn extrapolation_is_identity_at_one_atom() {
        assert_relative_eq!(
            extrapolate_single_atom_rate(0.42, 1.0, 0.16, 4.0).unwrap(),
            0.42,
            max_relative = 1e-15
        );
    }
}
