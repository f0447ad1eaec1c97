use std::path::Path;

use cavity_detect::fidelity::DetectorRates;
use cavity_detect::neff::NeffKind;
use cavity_detect::signal::{Calibration, DetectionMode, DriveConfig, SignalModel};
use cavity_detect::transit::{CloudProfile, ExperimentPlan, TimeGrid};
use cavity_detect::zeeman::{self, CavityCollection, DrivePolarization, LevelScheme};
use cavity_detect::PhysicalParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

const PRESETS: [(&str, &str); 3] = [
    ("paper-reflection", include_str!("../presets/paper-reflection.toml")),
    ("paper-fluorescence", include_str!("../presets/paper-fluorescence.toml")),
    ("table1", include_str!("../presets/table1.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

/// Complete declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_params")]
    pub params: PhysicalParams,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default = "default_cloud")]
    pub cloud: CloudProfile,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub neff: NeffConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub steady: SteadyConfig,
    #[serde(default)]
    pub zeeman: ZeemanConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_params() -> PhysicalParams {
    PhysicalParams::RB87_MICROCAVITY
}

fn default_cloud() -> CloudProfile {
    CloudProfile::gaussian(1.06, 10.0, 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub mode: DetectionMode,
    /// Incident probe flux, photons/µs.
    pub j_in_per_us: f64,
    pub fringe_amplitude: f64,
    pub saturation: f64,
    pub fibre_coupling: f64,
    pub efficiency: f64,
    pub fluorescence_rate_one_atom_per_us: f64,
    /// C′/C; computed from the Zeeman model when absent.
    pub cooperativity_ratio: Option<f64>,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            mode: DetectionMode::Reflection,
            j_in_per_us: 0.43,
            fringe_amplitude: 0.5,
            saturation: 4.0,
            fibre_coupling: 0.1,
            efficiency: 0.3,
            fluorescence_rate_one_atom_per_us: 0.42,
            cooperativity_ratio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub bin_width_us: f64,
    pub bins: usize,
    pub start_ms: f64,
    pub n_trials: usize,
    pub background_per_us: f64,
    /// m/s.
    pub atom_speed: f64,
    pub motion: String,
    pub refresh_bins: Option<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            bin_width_us: 2.0,
            bins: 10_000,
            start_ms: 0.0,
            n_trials: 300,
            background_per_us: 0.0,
            atom_speed: 0.64,
            motion: "block".into(),
            refresh_bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeffConfig {
    pub mean_neff: f64,
    pub model: NeffKind,
    pub samples: usize,
    pub bins: usize,
    pub resolution: usize,
}

impl Default for NeffConfig {
    fn default() -> Self {
        NeffConfig {
            mean_neff: 1.24,
            model: NeffKind::MonteCarloEmpirical,
            samples: 100_000,
            bins: 512,
            resolution: 4097,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub max_lag: usize,
    /// Running-average window for Var/mean, in bins.
    pub variance_window: Option<usize>,
    pub signal_per_ms: f64,
    pub background_per_ms: f64,
    pub prior: f64,
    pub thresholds: Vec<u32>,
    pub fidelity_window_us: f64,
    pub fidelity_points: usize,
    /// Fit the cloud envelope to the trial-averaged counts.
    pub fit: bool,
    pub fit_model: String,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            max_lag: 20,
            variance_window: None,
            signal_per_ms: 420.0,
            background_per_ms: 3.84,
            prior: 0.5,
            thresholds: vec![1, 2],
            fidelity_window_us: 100.0,
            fidelity_points: 201,
            fit: false,
            fit_model: "distribution_averaged".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadyConfig {
    /// Per-atom coupling in units of params.g.
    pub couplings: Vec<f64>,
    /// Cavity pump η/κ.
    pub pump_over_kappa: f64,
    /// Transverse pump Ω/2π, MHz, applied to every atom.
    pub rabi: f64,
    pub fock_cutoff: usize,
    pub solver: String,
    pub converge_cutoff: bool,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            couplings: vec![1.0],
            pump_over_kappa: 1e-3,
            rabi: 0.0,
            fock_cutoff: 5,
            solver: "auto".into(),
            converge_cutoff: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationKind {
    TransverseLinear,
    SigmaPlus,
    SigmaMinus,
    Pi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeemanConfig {
    pub model: String,
    pub polarization: PolarizationKind,
    pub saturation: f64,
    pub collection: CavityCollection,
    /// Saturations for a scan of C′/C.
    pub scan: Vec<f64>,
}

impl Default for ZeemanConfig {
    fn default() -> Self {
        ZeemanConfig {
            model: "bloch".into(),
            polarization: PolarizationKind::TransverseLinear,
            saturation: 4.0,
            collection: CavityCollection::DrivePolarized,
            scan: vec![1.0, 2.0, 5.0, 10.0, 20.0],
        }
    }
}

impl ZeemanConfig {
    pub fn drive(&self, saturation: f64) -> DrivePolarization {
        match self.polarization {
            PolarizationKind::TransverseLinear => DrivePolarization::transverse_linear(saturation),
            PolarizationKind::SigmaPlus => DrivePolarization::sigma_plus(saturation),
            PolarizationKind::SigmaMinus => DrivePolarization::sigma_minus(saturation),
            PolarizationKind::Pi => DrivePolarization::pi(saturation),
        }
    }

    pub fn ratio(&self, saturation: f64) -> cavity_detect::Result<f64> {
        zeeman::cooperativity_ratio(
            &LevelScheme::f2_to_f3(),
            &self.drive(saturation),
            self.collection,
            &self.model,
        )
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config {
                origin: origin.to_string(),
                message: format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    cfg.schema_version
                ),
            });
        }
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let text = PRESETS.iter().find(|p| p.0 == name).map(|p| p.1).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset `{name}` (available: {})",
                preset_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        Self::parse(text, &format!("preset {name}"))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn default_config() -> Self {
        RunConfig::parse("schema_version = 1", "defaults").expect("defaults parse")
    }

    pub fn signal_model(&self) -> Result<SignalModel, CliError> {
        let s = &self.signal;
        let ratio = match s.cooperativity_ratio {
            Some(r) => r,
            None if s.mode == DetectionMode::Fluorescence => self.zeeman.ratio(s.saturation)?,
            None => 1.0,
        };
        let model = SignalModel {
            params: self.params,
            mode: s.mode,
            drive: DriveConfig {
                j_in: s.j_in_per_us,
                fringe_amplitude: s.fringe_amplitude,
                saturation: s.saturation,
                fibre_coupling: s.fibre_coupling,
            },
            calibration: Calibration {
                efficiency: s.efficiency,
                fluorescence_rate_one_atom: s.fluorescence_rate_one_atom_per_us,
            },
            cooperativity_ratio: ratio,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn experiment_plan(&self) -> Result<ExperimentPlan, CliError> {
        let p = &self.plan;
        let plan = ExperimentPlan {
            signal: self.signal_model()?,
            grid: TimeGrid {
                start_ms: p.start_ms,
                bin_width_us: p.bin_width_us,
                bins: p.bins,
            },
            n_trials: p.n_trials,
            background_per_us: p.background_per_us,
            atom_speed: p.atom_speed,
            motion: p.motion.clone(),
            refresh_bins: p.refresh_bins,
            seed: self.seed,
        };
        plan.validate()?;
        self.cloud.validate()?;
        Ok(plan)
    }

    pub fn detector_rates(&self) -> Result<DetectorRates, CliError> {
        let a = &self.analysis;
        Ok(DetectorRates::new(a.signal_per_ms, a.background_per_ms, a.prior)?)
    }

    /// Checks every section so that errors surface before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate()?;
        self.experiment_plan()?;
        self.detector_rates()?;
        if self.analysis.thresholds.iter().any(|&k| k == 0) {
            return Err(CliError::Usage("analysis.thresholds must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::parse("schema_version = 1\n[plan]\nbins = 3\nbogus = 1\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn schema_version_is_checked() {
        assert!(RunConfig::parse("schema_version = 2", "t").is_err());
        assert!(RunConfig::parse("seed = 3", "t").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::preset("paper-fluorescence").unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text, "rt").unwrap(), c);
    }

    #[test]
    fn fluorescence_ratio_comes_from_zeeman_model() {
        let c = RunConfig::preset("paper-fluorescence").unwrap();
        let m = c.signal_model().unwrap();
        assert!((m.cooperativity_ratio - 5.0 / 9.0).abs() < 1e-6);
    }
}
