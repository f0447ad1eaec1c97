//! Closed-form cavity signals in the bad-cavity, weak-excitation limit.
//!
//! Reflection: j_out = j_in·[(b + 2C)/(1 + 2C)]², with b the fringe amplitude of
//! the empty-cavity reflection dip. Fluorescence into the cavity mode:
//! j_out = 2C′γξ·s/((1 + 2C′)² + s). Rates are in photons per µs; γ enters as
//! an angular rate 2π·γ.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_non_negative, ensure_probability, Error, Result};
use crate::params::{PhysicalParams, RegimeWarning, WEAK_EXCITATION_THRESHOLD};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    Reflection,
    Fluorescence,
}

impl DetectionMode {
    pub fn name(self) -> &'static str {
        match self {
            DetectionMode::Reflection => "reflection",
            DetectionMode::Fluorescence => "fluorescence",
        }
    }
}

/// Probe and pump settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    /// Incident probe flux, photons/µs.
    pub j_in: f64,
    /// Empty-cavity reflection fringe amplitude b, 0 ≤ b ≤ 1.
    pub fringe_amplitude: f64,
    /// Transverse pump saturation s = ½(Ω/γ)².
    pub saturation: f64,
    /// Fraction of cavity output reaching the detection fibre.
    pub fibre_coupling: f64,
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("j_in", self.j_in)?;
        ensure_probability("fringe_amplitude", self.fringe_amplitude)?;
        ensure_non_negative("saturation", self.saturation)?;
        ensure_probability("fibre_coupling", self.fibre_coupling)
    }

    /// Pump Rabi frequency Ω/2π in MHz for the configured saturation.
    pub fn rabi(&self, gamma: f64) -> f64 {
        gamma * (2.0 * self.saturation).sqrt()
    }
}

/// Saturation parameter s = ½(Ω/γ)².
pub fn saturation_from_rabi(rabi: f64, gamma: f64) -> f64 {
    0.5 * (rabi / gamma).powi(2)
}

/// Reflected fraction [(b + 2C)/(1 + 2C)]².
pub fn reflection_ratio(c_n: f64, fringe_amplitude: f64) -> f64 {
    let r = (fringe_amplitude + 2.0 * c_n) / (1.0 + 2.0 * c_n);
    r * r
}

/// Reflected flux for collective cooperativity `c_n`.
pub fn reflection_rate(c_n: f64, drive: &DriveConfig) -> Result<f64> {
    ensure_non_negative("c_n", c_n)?;
    drive.validate()?;
    Ok(drive.j_in * reflection_ratio(c_n, drive.fringe_amplitude))
}

/// Fluorescence flux into the detection fibre, photons/µs.
pub fn fluorescence_rate(c_prime: f64, saturation: f64, gamma: f64, fibre_coupling: f64) -> Result<f64> {
    ensure_non_negative("c_prime", c_prime)?;
    ensure_non_negative("saturation", saturation)?;
    ensure_probability("fibre_coupling", fibre_coupling)?;
    Ok(fluorescence_shape(c_prime, saturation) * 2.0 * PI * gamma * fibre_coupling)
}

/// 2C′·s/((1 + 2C′)² + s), the dimensionless fluorescence lineshape.
pub fn fluorescence_shape(c_prime: f64, saturation: f64) -> f64 {
    let d = 1.0 + 2.0 * c_prime;
    2.0 * c_prime * saturation / (d * d + saturation)
}

/// Cooperativity C′ = ½√(1 + s) maximizing the fluorescence flux.
pub fn fluorescence_optimum(saturation: f64) -> f64 {
    0.5 * (1.0 + saturation).sqrt()
}

/// Excited-state population ½(Ω²/2)/(γ_tot² + Ω²/2) with γ_tot = (1 + 2C)γ.
pub fn excited_population(rabi: f64, gamma: f64, c_n: f64) -> f64 {
    let gt = (1.0 + 2.0 * c_n) * gamma;
    let w = rabi * rabi / 2.0;
    0.5 * w / (gt * gt + w)
}

/// Purcell-enhanced dipole decay and the fraction emitted into the cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurcellRates {
    /// (1 + 2C)γ, MHz.
    pub total: f64,
    /// 2C/(1 + 2C).
    pub cavity_fraction: f64,
}

pub fn purcell_rates(c_n: f64, gamma: f64) -> PurcellRates {
    PurcellRates {
        total: (1.0 + 2.0 * c_n) * gamma,
        cavity_fraction: 2.0 * c_n / (1.0 + 2.0 * c_n),
    }
}

/// Weak-drive intracavity amplitude α = (η/κ)/(1 + 2C) with photon number |α|².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntracavityField {
    pub amplitude: f64,
    pub photons: f64,
    pub warning: Option<RegimeWarning>,
}

pub fn intracavity_amplitude(pump: f64, kappa: f64, c_n: f64) -> Result<IntracavityField> {
    ensure_finite("pump", pump)?;
    ensure_non_negative("c_n", c_n)?;
    if kappa <= 0.0 {
        return Err(Error::invalid("kappa", "must be positive"));
    }
    let amplitude = (pump / kappa) / (1.0 + 2.0 * c_n);
    let photons = amplitude * amplitude;
    let warning = (photons >= WEAK_EXCITATION_THRESHOLD).then_some(RegimeWarning::NotWeakExcitation { photons });
    Ok(IntracavityField {
        amplitude,
        photons,
        warning,
    })
}

/// Signal output at one collective cooperativity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPoint {
    pub c_n: f64,
    pub j_out: f64,
    pub mode: DetectionMode,
}

/// A detection scheme mapping collective cooperativity to output flux.
pub trait SignalBranch: Send + Sync {
    fn name(&self) -> &'static str;
    fn mode(&self) -> DetectionMode;
    /// Output flux in photons/µs. For fluorescence `c_n` is C′_N.
    fn rate(&self, c_n: f64, drive: &DriveConfig, params: &PhysicalParams) -> f64;

    fn evaluate(&self, c_n: f64, drive: &DriveConfig, params: &PhysicalParams) -> Result<SignalPoint> {
        ensure_non_negative("c_n", c_n)?;
        drive.validate()?;
        Ok(SignalPoint {
            c_n,
            j_out: self.rate(c_n, drive, params),
            mode: self.mode(),
        })
    }
}

pub struct ReflectionBranch;
pub struct FluorescenceBranch;

impl SignalBranch for ReflectionBranch {
    fn name(&self) -> &'static str {
        "reflection"
    }

    fn mode(&self) -> DetectionMode {
        DetectionMode::Reflection
    }

    fn rate(&self, c_n: f64, drive: &DriveConfig, _: &PhysicalParams) -> f64 {
        drive.j_in * reflection_ratio(c_n, drive.fringe_amplitude)
    }
}

impl SignalBranch for FluorescenceBranch {
    fn name(&self) -> &'static str {
        "fluorescence"
    }

    fn mode(&self) -> DetectionMode {
        DetectionMode::Fluorescence
    }

    fn rate(&self, c_n: f64, drive: &DriveConfig, params: &PhysicalParams) -> f64 {
        fluorescence_shape(c_n, drive.saturation) * 2.0 * PI * params.gamma * drive.fibre_coupling
    }
}

pub fn signal_branches() -> &'static Registry<dyn SignalBranch> {
    static REG: OnceLock<Registry<dyn SignalBranch>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn SignalBranch>::new("signal_branch", "reflection")
            .register("reflection", "cavity reflection of a weak probe", |_| {
                Box::new(ReflectionBranch)
            })
            .register("fluorescence", "transversely pumped emission into the mode", |_| {
                Box::new(FluorescenceBranch)
            })
    })
}

pub fn branch_for(mode: DetectionMode) -> Box<dyn SignalBranch> {
    signal_branches()
        .build(mode.name(), &())
        .expect("both modes are registered")
}

/// Detector calibration converting cavity output into detected counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Overall detection efficiency for reflected light.
    pub efficiency: f64,
    /// Detected fluorescence count rate for one maximally coupled atom, counts/µs.
    pub fluorescence_rate_one_atom: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            efficiency: 0.3,
            fluorescence_rate_one_atom: 0.42,
        }
    }
}

/// Detected atom-dependent count rate as a function of N_eff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub params: PhysicalParams,
    pub mode: DetectionMode,
    pub drive: DriveConfig,
    pub calibration: Calibration,
    /// C′₁/C₁ for the fluorescence transition.
    pub cooperativity_ratio: f64,
}

impl SignalModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.drive.validate()?;
        ensure_probability("calibration.efficiency", self.calibration.efficiency)?;
        ensure_non_negative(
            "calibration.fluorescence_rate_one_atom",
            self.calibration.fluorescence_rate_one_atom,
        )?;
        ensure_non_negative("cooperativity_ratio", self.cooperativity_ratio)
    }

    pub fn c1(&self) -> f64 {
        let c = self.params.cooperativity().c1;
        match self.mode {
            DetectionMode::Reflection => c,
            DetectionMode::Fluorescence => c * self.cooperativity_ratio,
        }
    }

    /// Detected counts/µs (background excluded).
    pub fn detected_rate(&self, neff: f64) -> f64 {
        let c_n = self.c1() * neff;
        match self.mode {
            DetectionMode::Reflection => {
                self.calibration.efficiency * self.drive.j_in * reflection_ratio(c_n, self.drive.fringe_amplitude)
            }
            DetectionMode::Fluorescence => {
                let one = fluorescence_shape(self.c1(), self.drive.saturation);
                if one == 0.0 {
                    0.0
                } else {
                    self.calibration.fluorescence_rate_one_atom * fluorescence_shape(c_n, self.drive.saturation) / one
                }
            }
        }
    }

    /// Detected rate with no atoms.
    pub fn empty_rate(&self) -> f64 {
        self.detected_rate(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const P: PhysicalParams = PhysicalParams::RB87_MICROCAVITY;

    #[test]
    fn reflection_limits() {
        assert_eq!(reflection_ratio(0.0, 0.0), 0.0);
        assert_relative_eq!(reflection_ratio(1e9, 0.3), 1.0, max_relative = 1e-8);
        for c in [0.0, 0.2, 3.0] {
            assert_relative_eq!(reflection_ratio(c, 1.0), 1.0, max_relative = 1e-15);
        }
        assert_relative_eq!(reflection_ratio(0.0, 0.4), 0.16, max_relative = 1e-15);
        let d = DriveConfig {
            j_in: 2.0,
            fringe_amplitude: 0.0,
            saturation: 0.0,
            fibre_coupling: 1.0,
        };
        assert_relative_eq!(reflection_rate(0.5, &d).unwrap(), 0.5, max_relative = 1e-15);
        assert!(reflection_rate(-0.1, &d).is_err());
    }

    #[test]
    fn fluorescence_optimum_is_a_maximum() {
        for s in [0.5, 1.0, 4.0, 12.0] {
            let c0 = fluorescence_optimum(s);
            let f0 = fluorescence_shape(c0, s);
            // independent check: dense scan
            let best = (1..20000)
                .map(|i| i as f64 * 1e-3)
                .map(|c| (c, fluorescence_shape(c, s)))
                .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
            assert!((best.0 - c0).abs() < 2e-3, "s={s}");
            assert!(f0 >= best.1);
        }
        assert_relative_eq!(fluorescence_optimum(3.0), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn purcell_and_population() {
        let c1 = P.cooperativity().c1;
        let r = purcell_rates(c1, P.gamma);
        assert_relative_eq!(r.total, P.gamma * (1.0 + 2.0 * c1), max_relative = 1e-15);
        assert_relative_eq!(r.cavity_fraction, 0.383, max_relative = 1e-3);
        assert_eq!(purcell_rates(0.0, 3.0).cavity_fraction, 0.0);
        assert_eq!(purcell_rates(0.5, 3.0).total, 6.0);
        assert_eq!(purcell_rates(1.0, 3.0).cavity_fraction, 2.0 / 3.0);
        // ρee saturates at ½
        assert_relative_eq!(excited_population(1e6, 3.0, 0.3), 0.5, max_relative = 1e-6);
        // emission into the mode equals 2γ_tot ρee times the cavity fraction
        let (s, c): (f64, f64) = (2.5, 0.4);
        let rabi = 3.0 * (2.0 * s).sqrt();
        let pe = excited_population(rabi, 3.0, c);
        let via_pop = 2.0 * purcell_rates(c, 3.0).total * pe * purcell_rates(c, 3.0).cavity_fraction;
        assert_relative_eq!(via_pop, 3.0 * fluorescence_shape(c, s), max_relative = 1e-13);
        assert_relative_eq!(saturation_from_rabi(rabi, 3.0), s, max_relative = 1e-14);
    }

    #[test]
    fn intracavity_field() {
        let f = intracavity_amplitude(52.0, 5200.0, 0.0).unwrap();
        assert_relative_eq!(f.amplitude, 0.01, max_relative = 1e-14);
        assert!(f.warning.is_none());
        let strong = intracavity_amplitude(5200.0, 5200.0, 0.0).unwrap();
        assert!(matches!(strong.warning, Some(RegimeWarning::NotWeakExcitation { .. })));
    }

    #[test]
    fn branch_registry_and_model() {
        let names: Vec<_> = signal_branches().names().collect();
        assert_eq!(names, vec!["reflection", "fluorescence"]);
        let drive = DriveConfig {
            j_in: 1.0,
            fringe_amplitude: 0.5,
            saturation: 4.0,
            fibre_coupling: 1.0,
        };
        let p = branch_for(DetectionMode::Reflection).evaluate(0.3, &drive, &P).unwrap();
        assert_relative_eq!(p.j_out, (1.1f64 / 1.6).powi(2), max_relative = 1e-14);
        let m = SignalModel {
            params: P,
            mode: DetectionMode::Fluorescence,
            drive,
            calibration: Calibration::default(),
            cooperativity_ratio: 0.53,
        };
        assert_relative_eq!(m.detected_rate(1.0), 0.42, max_relative = 1e-14);
        assert_eq!(m.empty_rate(), 0.0);
        let bad = DriveConfig {
            fringe_amplitude: 1.5,
            ..drive
        };
        assert!(bad.validate().is_err());
    }
}
