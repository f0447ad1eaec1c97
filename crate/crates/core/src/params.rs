//! Cavity and atom constants, cooperativity and the cavity mode geometry.
//!
//! Frequencies are angular frequencies divided by 2π, in MHz. Lengths are in
//! µm. Dimensionless ratios such as the cooperativity are unaffected by the
//! 2π convention.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Result};

/// Above this value of (g/κ)⁴ the closed-form cavity signals are no longer
/// reliable and a [`RegimeWarning::StrongCoupling`] is raised.
pub const STRONG_COUPLING_THRESHOLD: f64 = 1e-3;

/// Above this mean intracavity photon number the weak-excitation forms are
/// flagged with [`RegimeWarning::NotWeakExcitation`].
pub const WEAK_EXCITATION_THRESHOLD: f64 = 0.1;

/// Assumption violations that degrade an approximation without invalidating it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RegimeWarning {
    /// (g/κ)⁴ is not small.
    StrongCoupling { g_over_kappa_4: f64 },
    /// Mean intracavity photon number is not ≪ 1.
    NotWeakExcitation { photons: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Single-photon coupling g/2π, MHz.
    pub g: f64,
    /// Cavity field decay κ/2π, MHz.
    pub kappa: f64,
    /// Atomic dipole decay γ/2π, MHz.
    pub gamma: f64,
    /// Wavelength, µm.
    pub lambda: f64,
    /// Cavity length, µm.
    pub cavity_length: f64,
    /// 1/e field radius of the mode, µm.
    pub waist: f64,
}

impl PhysicalParams {
    /// ⁸⁷Rb D₂ line in the plano-concave fibre microcavity
    /// (g, κ, γ)/2π = (98.4, 5200, 3) MHz, L = 139 µm, w = 4.46 µm.
    pub const RB87_MICROCAVITY: PhysicalParams = PhysicalParams {
        g: 98.4,
        kappa: 5200.0,
        gamma: 3.0,
        lambda: 0.780,
        cavity_length: 139.0,
        waist: 4.46,
    };

    pub fn new(g: f64, kappa: f64, gamma: f64, lambda: f64, cavity_length: f64, waist: f64) -> Result<Self> {
        let p = PhysicalParams {
            g,
            kappa,
            gamma,
            lambda,
            cavity_length,
            waist,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("g", self.g)?;
        ensure_positive("kappa", self.kappa)?;
        ensure_positive("gamma", self.gamma)?;
        ensure_positive("lambda", self.lambda)?;
        ensure_positive("cavity_length", self.cavity_length)?;
        ensure_positive("waist", self.waist)
    }

    pub fn with_g(self, g: f64) -> Self {
        PhysicalParams { g, ..self }
    }

    pub fn regime_warnings(&self) -> Vec<RegimeWarning> {
        let r4 = (self.g / self.kappa).powi(4);
        if r4 >= STRONG_COUPLING_THRESHOLD {
            vec![RegimeWarning::StrongCoupling { g_over_kappa_4: r4 }]
        } else {
            Vec::new()
        }
    }

    /// Reflection (cycling-transition) single-atom cooperativity.
    pub fn cooperativity(&self) -> Cooperativity {
        cooperativity_single(self)
    }

    pub fn mode_volume(&self) -> f64 {
        mode_volume(self.waist, self.cavity_length)
    }

    pub fn mode_function(&self, r: [f64; 3]) -> f64 {
        mode_function(r, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CooperativityKind {
    Reflection,
    Fluorescence,
}

/// Single-atom cooperativity C₁ for one of the two detection schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cooperativity {
    pub c1: f64,
    pub label: CooperativityKind,
}

impl Cooperativity {
    /// C_N = C₁ · N_eff.
    pub fn scaled(&self, neff: f64) -> f64 {
        self.c1 * neff
    }

    /// Fluorescence cooperativity C′₁ = ratio · C₁.
    pub fn to_fluorescence(&self, ratio: f64) -> Cooperativity {
        Cooperativity {
            c1: self.c1 * ratio,
            label: CooperativityKind::Fluorescence,
        }
    }
}

/// C₁ = g²/(2κγ).
pub fn single_atom_cooperativity(g: f64, kappa: f64, gamma: f64) -> f64 {
    g * g / (2.0 * kappa * gamma)
}

pub fn cooperativity_single(params: &PhysicalParams) -> Cooperativity {
    Cooperativity {
        c1: single_atom_cooperativity(params.g, params.kappa, params.gamma),
        label: CooperativityKind::Reflection,
    }
}

/// V_cav = πw²L/4 in µm³.
pub fn mode_volume(waist: f64, length: f64) -> f64 {
    PI * waist * waist * length / 4.0
}

/// Standing-wave Gaussian mode χ(r) = sin(2πz/λ)·exp[−(x²+y²)/w²].
#[inline]
pub fn mode_function(r: [f64; 3], params: &PhysicalParams) -> f64 {
    let [x, y, z] = r;
    (2.0 * PI * z / params.lambda).sin() * (-(x * x + y * y) / (params.waist * params.waist)).exp()
}

/// |χ(r)|², the per-atom contribution to N_eff.
#[inline]
pub fn mode_weight(r: [f64; 3], params: &PhysicalParams) -> f64 {
    let chi = mode_function(r, params);
    chi * chi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const P: PhysicalParams = PhysicalParams::RB87_MICROCAVITY;

    #[test]
    fn cooperativity_values() {
        assert_relative_eq!(P.cooperativity().c1, 9682.56 / 31200.0, max_relative = 1e-12);
        // quoted 0.307(11)
        assert!((P.cooperativity().c1 - 0.307).abs() < 0.011);
        assert_eq!(single_atom_cooperativity(0.0, 5200.0, 3.0), 0.0);
        for (k, g) in [(1.0, 2.0), (5200.0, 3.0), (0.3, 17.0)] {
            let g_unit = (2.0 * k * g as f64).sqrt();
            assert_relative_eq!(single_atom_cooperativity(g_unit, k, g), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn mode_volume_values() {
        assert_relative_eq!(P.mode_volume(), 2171.6, max_relative = 5e-5);
        let mean = 4.9e-4 * P.mode_volume();
        assert!((mean - 1.064).abs() < 5e-4);
        assert!((mean - 1.06).abs() < 0.04);
        assert_eq!(mode_volume(0.0, 139.0), 0.0);
    }

    #[test]
    fn mode_function_landmarks() {
        let l = P.lambda;
        assert_relative_eq!(P.mode_function([0.0, 0.0, l / 4.0]), 1.0, max_relative = 1e-14);
        assert!(P.mode_function([0.0, 0.0, l / 2.0]).abs() < 1e-14);
        assert_relative_eq!(
            P.mode_function([P.waist, 0.0, l / 4.0]),
            (-1.0f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn validation_and_warnings() {
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 1.0, -1.0).is_err());
        assert!(PhysicalParams::new(0.0, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(P.regime_warnings().is_empty());
        let strong = P.with_g(2000.0);
        assert!(matches!(
            strong.regime_warnings()[0],
            RegimeWarning::StrongCoupling { .. }
        ));
    }
}
