//! The driven atoms–cavity system in a truncated Fock space.
//!
//! H = −iη(a − a†) − i Σⱼ [(gⱼa + ½Ωⱼ)σⱼ† − h.c.] with dissipators
//! A₀ = √(2κ)·a and Aⱼ = √(2γ)·σⱼ. Frequencies are given as MHz (ω/2π) and
//! converted to angular rates, so the generator acts per µs.
//!
//! Basis ordering: index = n·2ᴺ + bits, where bit j set means atom j excited.

mod jumps;

pub use jumps::{quantum_jump_ensemble, Channel, Estimate, JumpConfig, JumpEnsemble, JumpEvent, TrajectoryRecord};

use std::f64::consts::PI;

use crate::error::{ensure_finite, ensure_non_negative, Error, Result};
use crate::lindblad::{steady_state_solvers, CMat, DensityOperator, JumpOperator, Lindbladian, C64, I};
use crate::params::PhysicalParams;
use crate::signal::reflection_ratio;

pub const DEFAULT_FOCK_CUTOFF: usize = 5;
pub const DEFAULT_MAX_DIM: usize = 4096;
pub const DEFAULT_MAX_ATOMS: usize = 3;
/// ⟨a†a⟩ change accepted by [`steady_state_converged`] when doubling the cutoff.
pub const CUTOFF_CONVERGENCE: f64 = 1e-8;
/// Below this photon number g²(0) is reported as undefined.
pub const MIN_PHOTONS_FOR_G2: f64 = 1e-15;

/// Parameters of the quantum model. κ and γ are taken from `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub params: PhysicalParams,
    /// Per-atom coupling gⱼ/2π, MHz.
    pub couplings: Vec<f64>,
    /// Per-atom transverse pump Rabi frequency Ωⱼ/2π, MHz.
    pub rabi: Vec<C64>,
    /// Cavity pump η/2π, MHz.
    pub pump: f64,
    pub fock_cutoff: usize,
    pub max_dim: usize,
    pub max_atoms: usize,
}

impl SystemSpec {
    pub fn empty_cavity(params: PhysicalParams, pump: f64) -> Self {
        SystemSpec {
            params,
            couplings: Vec::new(),
            rabi: Vec::new(),
            pump,
            fock_cutoff: DEFAULT_FOCK_CUTOFF,
            max_dim: DEFAULT_MAX_DIM,
            max_atoms: DEFAULT_MAX_ATOMS,
        }
    }

    /// One atom at coupling `params.g`.
    pub fn single_atom(params: PhysicalParams, pump: f64, rabi: f64) -> Self {
        SystemSpec {
            couplings: vec![params.g],
            rabi: vec![C64::new(rabi, 0.0)],
            ..Self::empty_cavity(params, pump)
        }
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.fock_cutoff = cutoff;
        self
    }

    pub fn n_atoms(&self) -> usize {
        self.couplings.len()
    }

    pub fn dim(&self) -> usize {
        (self.fock_cutoff + 1) << self.n_atoms()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.rabi.len() != self.couplings.len() {
            return Err(Error::invalid(
                "rabi",
                format!(
                    "{} Rabi frequencies for {} atoms",
                    self.rabi.len(),
                    self.couplings.len()
                ),
            ));
        }
        if self.n_atoms() > self.max_atoms {
            return Err(Error::invalid(
                "couplings",
                format!("{} atoms exceeds the limit of {}", self.n_atoms(), self.max_atoms),
            ));
        }
        if self.fock_cutoff < 1 {
            return Err(Error::invalid("fock_cutoff", "must be at least 1"));
        }
        for &g in &self.couplings {
            ensure_non_negative("couplings", g)?;
        }
        for o in &self.rabi {
            ensure_finite("rabi", o.re)?;
            ensure_finite("rabi", o.im)?;
        }
        ensure_non_negative("pump", self.pump)?;
        let atoms = 1usize << self.n_atoms();
        if self.dim() > self.max_dim {
            return Err(Error::DimensionOverflow {
                dim: self.dim(),
                max: self.max_dim,
                max_cutoff: (self.max_dim / atoms).saturating_sub(1),
            });
        }
        Ok(())
    }
}

/// Field and atomic operators on the product space.
#[derive(Debug, Clone)]
pub struct Operators {
    pub a: CMat,
    pub sigma: Vec<CMat>,
    pub number: CMat,
}

impl Operators {
    pub fn new(cutoff: usize, n_atoms: usize) -> Self {
        let atoms = 1usize << n_atoms;
        let d = (cutoff + 1) * atoms;
        let mut a = CMat::zeros(d, d);
        for n in 1..=cutoff {
            for b in 0..atoms {
                a[((n - 1) * atoms + b, n * atoms + b)] = C64::new((n as f64).sqrt(), 0.0);
            }
        }
        let sigma = (0..n_atoms)
            .map(|j| {
                let mut s = CMat::zeros(d, d);
                for n in 0..=cutoff {
                    for b in 0..atoms {
                        if b & (1 << j) != 0 {
                            s[(n * atoms + (b & !(1 << j)), n * atoms + b)] = C64::new(1.0, 0.0);
                        }
                    }
                }
                s
            })
            .collect();
        let number = a.adjoint() * &a;
        Operators { a, sigma, number }
    }
}

fn ang(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// Lindblad generator of the system, rates in µs⁻¹.
pub fn build_generator(spec: &SystemSpec) -> Result<Lindbladian> {
    spec.validate()?;
    let ops = Operators::new(spec.fock_cutoff, spec.n_atoms());
    Ok(generator_from(spec, &ops))
}

fn generator_from(spec: &SystemSpec, ops: &Operators) -> Lindbladian {
    let a = &ops.a;
    let mut h = (a - a.adjoint()) * (-I * ang(spec.pump));
    for (j, s) in ops.sigma.iter().enumerate() {
        let x = (a * C64::new(ang(spec.couplings[j]), 0.0)
            + CMat::identity(a.nrows(), a.ncols()) * (spec.rabi[j] * ang(0.5)))
            * s.adjoint();
        h += (&x - x.adjoint()) * (-I);
    }
    let mut jumps = vec![JumpOperator {
        label: "cavity".into(),
        op: a * C64::new((2.0 * ang(spec.params.kappa)).sqrt(), 0.0),
    }];
    for (j, s) in ops.sigma.iter().enumerate() {
        jumps.push(JumpOperator {
            label: format!("atom{j}"),
            op: s * C64::new((2.0 * ang(spec.params.gamma)).sqrt(), 0.0),
        });
    }
    Lindbladian::new(h, jumps)
}

/// Stationary state with the observables used for cross-checks.
#[derive(Debug, Clone)]
pub struct QuantumSteadyState {
    pub spec: SystemSpec,
    pub rho: DensityOperator,
    pub residual: f64,
    pub solver: &'static str,
    ops: Operators,
}

impl QuantumSteadyState {
    /// ⟨a†a⟩.
    pub fn photons(&self) -> f64 {
        self.rho.expect(&self.ops.number).re
    }

    /// ⟨a⟩.
    pub fn field(&self) -> C64 {
        self.rho.expect(&self.ops.a)
    }

    /// ⟨σⱼ†σⱼ⟩.
    pub fn excitation(&self, atom: usize) -> f64 {
        let s = &self.ops.sigma[atom];
        self.rho.expect(&(s.adjoint() * s)).re
    }

    pub fn total_excitation(&self) -> f64 {
        (0..self.spec.n_atoms()).map(|j| self.excitation(j)).sum()
    }

    /// ⟨a†a†aa⟩/⟨a†a⟩².
    pub fn g2_zero(&self) -> Result<f64> {
        let n = self.photons();
        if n < MIN_PHOTONS_FOR_G2 {
            return Err(Error::Undefined(format!(
                "g2(0) needs a populated cavity, ⟨a†a⟩ = {n:e}"
            )));
        }
        let ad = self.ops.a.adjoint();
        let num = self.rho.expect(&(&ad * &ad * &self.ops.a * &self.ops.a)).re;
        Ok(num / (n * n))
    }

    /// Photon emission rate through the mirrors 2κ⟨a†a⟩, µs⁻¹.
    pub fn cavity_emission_rate(&self) -> f64 {
        2.0 * ang(self.spec.params.kappa) * self.photons()
    }

    /// Spontaneous emission rate 2γΣ⟨σ†σ⟩, µs⁻¹.
    pub fn atomic_emission_rate(&self) -> f64 {
        2.0 * ang(self.spec.params.gamma) * self.total_excitation()
    }

    /// J_out/J_in = |1 − (1 − b)·κ⟨a⟩/η|², the input–output reflected fraction
    /// for a probe with empty-cavity fringe amplitude b.
    pub fn reflected_fraction(&self, fringe_amplitude: f64) -> Result<f64> {
        if self.spec.pump <= 0.0 {
            return Err(Error::Undefined("reflection needs a cavity pump".into()));
        }
        let r =
            C64::new(1.0, 0.0) - self.field() * ((1.0 - fringe_amplitude) * self.spec.params.kappa / self.spec.pump);
        Ok(r.norm_sqr())
    }

    /// Reflected fraction from the closed form for comparison, using C_N = Σgⱼ²/(2κγ).
    pub fn closed_form_reflection(&self, fringe_amplitude: f64) -> f64 {
        let p = &self.spec.params;
        let c: f64 = self
            .spec
            .couplings
            .iter()
            .map(|g| g * g / (2.0 * p.kappa * p.gamma))
            .sum();
        reflection_ratio(c, fringe_amplitude)
    }
}

/// Steady state with the named solver ("auto", "direct", "gmres").
pub fn steady_state_with(spec: &SystemSpec, solver: &str) -> Result<QuantumSteadyState> {
    spec.validate()?;
    let ops = Operators::new(spec.fock_cutoff, spec.n_atoms());
    let gen = generator_from(spec, &ops);
    let ss = steady_state_solvers().build(solver, &())?.solve(&gen)?;
    Ok(QuantumSteadyState {
        spec: spec.clone(),
        rho: ss.rho,
        residual: ss.residual,
        solver: ss.solver,
        ops,
    })
}

pub fn steady_state(spec: &SystemSpec) -> Result<QuantumSteadyState> {
    steady_state_with(spec, "auto")
}

/// Doubles the Fock cutoff until ⟨a†a⟩ moves by less than [`CUTOFF_CONVERGENCE`].
pub fn steady_state_converged(spec: &SystemSpec, solver: &str) -> Result<QuantumSteadyState> {
    let mut current = steady_state_with(spec, solver)?;
    loop {
        let next_spec = current.spec.clone().with_cutoff(current.spec.fock_cutoff * 2);
        if let Err(e) = next_spec.validate() {
            return match e {
                Error::DimensionOverflow { .. } => Err(Error::NonConvergence {
                    what: "fock cutoff",
                    residual: f64::NAN,
                }),
                other => Err(other),
            };
        }
        let next = steady_state_with(&next_spec, solver)?;
        let shift = (next.photons() - current.photons()).abs();
        current = next;
        if shift < CUTOFF_CONVERGENCE {
            return Ok(current);
        }
    }
}

/// Steady-state g²(0) of the intracavity field.
pub fn field_g2_zero(spec: &SystemSpec) -> Result<f64> {
    steady_state(spec)?.g2_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{fluorescence_rate, intracavity_amplitude};

    const P: PhysicalParams = PhysicalParams::RB87_MICROCAVITY;

    #[test]
    fn vacuum_is_stationary_without_drive() {
        let spec = SystemSpec::empty_cavity(P, 0.0);
        let gen = build_generator(&spec).unwrap();
        let mut vac = CMat::zeros(spec.dim(), spec.dim());
        vac[(0, 0)] = C64::new(1.0, 0.0);
        assert!(gen.apply(&vac).norm() < 1e-15);
        assert!(matches!(field_g2_zero(&spec), Err(Error::Undefined(_))));
    }

    #[test]
    fn empty_cavity_is_coherent() {
        let spec = SystemSpec::empty_cavity(P, 0.01 * P.kappa);
        let ss = steady_state(&spec).unwrap();
        assert!((ss.photons() - 1e-4).abs() < 1e-12);
        assert!((ss.g2_zero().unwrap() - 1.0).abs() < 1e-6);
        let bright = SystemSpec::empty_cavity(P, 0.3 * P.kappa).with_cutoff(12);
        let ss = steady_state(&bright).unwrap();
        assert!((ss.photons() - 0.09).abs() < 1e-9);
    }

    #[test]
    fn dimension_overflow_reports_cutoff() {
        let mut spec = SystemSpec::single_atom(P, 1.0, 0.0).with_cutoff(3000);
        spec.couplings = vec![P.g; 2];
        spec.rabi = vec![C64::new(0.0, 0.0); 2];
        match build_generator(&spec) {
            Err(Error::DimensionOverflow { max_cutoff, .. }) => assert_eq!(max_cutoff, 1023),
            other => panic!("{other:?}"),
        }
        let mut four = SystemSpec::single_atom(P, 1.0, 0.0);
        four.couplings = vec![P.g; 4];
        four.rabi = vec![C64::new(0.0, 0.0); 4];
        assert!(four.validate().is_err());
    }

    #[test]
    fn weak_drive_amplitude_matches_closed_form() {
        let pump = 1e-4 * P.kappa;
        let ss = steady_state(&SystemSpec::single_atom(P, pump, 0.0)).unwrap();
        let want = intracavity_amplitude(pump, P.kappa, P.cooperativity().c1).unwrap();
        let got = ss.photons().sqrt();
        assert!((got / want.amplitude - 1.0).abs() < 1e-4, "{got} vs {}", want.amplitude);
        let refl = ss.reflected_fraction(0.3).unwrap();
        assert!((refl / ss.closed_form_reflection(0.3) - 1.0).abs() < 1e-3);
    }

    /// Weak-drive g²(0) from the two-photon amplitudes of the pure-state
    /// expansion |0g⟩ + α|1g⟩ + β|0e⟩ + A|2g⟩ + B|1e⟩ under H_eff.
    fn weak_drive_g2(kappa: f64, g: f64, gamma: f64) -> f64 {
        let eta = 1.0;
        let s2 = 2f64.sqrt();
        let alpha = eta / (kappa + g * g / gamma);
        let beta = -g * alpha / gamma;
        let a2 =
            (eta * s2 * alpha + g * s2 * eta * beta / (kappa + gamma)) / (2.0 * kappa + 2.0 * g * g / (kappa + gamma));
        2.0 * a2 * a2 / alpha.powi(4)
    }

    #[test]
    fn single_atom_field_statistics_match_two_photon_amplitudes() {
        let pump = 3e-4 * P.kappa;
        let g2 = field_g2_zero(&SystemSpec::single_atom(P, pump, 0.0)).unwrap();
        let want = weak_drive_g2(P.kappa, P.g, P.gamma);
        assert!((g2 - want).abs() < 2e-3, "{g2} vs {want}");
        // weakly coupled atoms leave the field coherent
        let weak = P.with_g(10.0);
        let g2 = field_g2_zero(&SystemSpec::single_atom(weak, pump, 0.0)).unwrap();
        assert!((g2 - 1.0).abs() < 0.05, "{g2}");
        // spreading the same collective cooperativity over more atoms moves g² towards 1
        let mut three = SystemSpec::single_atom(P, pump, 0.0);
        three.couplings = vec![P.g / 3f64.sqrt(); 3];
        three.rabi = vec![C64::new(0.0, 0.0); 3];
        let g2_three = field_g2_zero(&three).unwrap();
        assert!((g2_three - 1.0).abs() < (want - 1.0).abs());
    }

    #[test]
    fn fluorescence_matches_closed_form() {
        for &c in &[0.05, 0.2, 0.5] {
            for &s in &[0.5, 2.0, 10.0] {
                let g = (2.0 * P.kappa * P.gamma * c).sqrt();
                let p = P.with_g(g);
                let rabi = P.gamma * (2.0 * s as f64).sqrt();
                let ss = steady_state(&SystemSpec::single_atom(p, 0.0, rabi)).unwrap();
                let want = fluorescence_rate(c, s, P.gamma, 1.0).unwrap();
                let got = ss.cavity_emission_rate();
                assert!((got / want - 1.0).abs() < 0.05, "c={c} s={s}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn cutoff_convergence_loop() {
        let spec = SystemSpec::single_atom(P, 0.05 * P.kappa, 0.0).with_cutoff(2);
        let ss = steady_state_converged(&spec, "auto").unwrap();
        assert!(ss.spec.fock_cutoff >= 4);
        let again = steady_state(&ss.spec.clone().with_cutoff(ss.spec.fock_cutoff * 2)).unwrap();
        assert!((again.photons() - ss.photons()).abs() < 1e-8);
    }

    #[test]
    fn two_atoms_solvers_agree() {
        let p = PhysicalParams {
            g: 20.0,
            kappa: 200.0,
            gamma: 3.0,
            ..P
        };
        let mut spec = SystemSpec::single_atom(p, 5.0, 1.0).with_cutoff(3);
        spec.couplings = vec![20.0, 12.0];
        spec.rabi = vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0)];
        let d = steady_state_with(&spec, "direct").unwrap();
        let g = steady_state_with(&spec, "gmres").unwrap();
        assert!((d.photons() - g.photons()).abs() < 1e-9 * d.photons().max(1e-6));
        assert!((d.total_excitation() - g.total_excitation()).abs() < 1e-9);
    }

    #[test]
    fn strong_coupling_regression_anchor() {
        // g ≫ κ, γ with a resonant probe: strongly bunched; value recorded from this solver
        let p = PhysicalParams {
            g: 50.0,
            kappa: 5.0,
            gamma: 1.0,
            ..P
        };
        let spec = SystemSpec::single_atom(p, 0.5, 0.0).with_cutoff(6);
        let g2 = field_g2_zero(&spec).unwrap();
        assert!((g2 / 2_729_471.39 - 1.0).abs() < 1e-6, "{g2}");
    }
}
