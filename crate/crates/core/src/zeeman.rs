//! Optical pumping among the Zeeman substates of an F = 2 → F′ = 3 transition.
//!
//! The cavity is neglected. A single resonant beam with polarization ε and
//! saturation s drives the atom; the equilibrium state fixes how strongly its
//! fluorescence couples into the cavity mode relative to a circularly
//! polarized probe on the cycling transition, i.e. the ratio C′_N/C_N.
//!
//! Spherical components q ∈ {−1, 0, +1} are taken relative to the cavity axis.
//! Ground states are indexed 0..5 (m = −2..2), excited states 5..12
//! (m′ = −3..3) for the alkali scheme.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, Error, Result};
use crate::lindblad::{CMat, DirectSolver, JumpOperator, Lindbladian, SteadyStateSolver, C64};
use crate::registry::Registry;

/// Sum-rule tolerance for branching tables.
pub const CLOSURE_TOLERANCE: f64 = 1e-12;

/// One dipole-allowed line |g, m⟩ → |e, m + q⟩ with Clebsch–Gordan amplitude c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub ground: usize,
    pub excited: usize,
    pub q: i32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    pub ground_m: Vec<i32>,
    pub excited_m: Vec<i32>,
    pub lines: Vec<Line>,
}

impl LevelScheme {
    /// F = 2 → F′ = 3 with squared Clebsch–Gordan coefficients
    /// q = +1: (m+3)(m+4)/30, q = 0: (9−m²)/15, q = −1: (3−m)(4−m)/30.
    pub fn f2_to_f3() -> Self {
        let ground_m: Vec<i32> = (-2..=2).collect();
        let excited_m: Vec<i32> = (-3..=3).collect();
        let mut lines = Vec::new();
        for (gi, &m) in ground_m.iter().enumerate() {
            let mf = m as f64;
            for q in -1..=1 {
                let sq = match q {
                    1 => (mf + 3.0) * (mf + 4.0) / 30.0,
                    0 => (9.0 - mf * mf) / 15.0,
                    _ => (3.0 - mf) * (4.0 - mf) / 30.0,
                };
                let ei = (m + q + 3) as usize;
                lines.push(Line {
                    ground: gi,
                    excited: ei,
                    q,
                    amplitude: sq.sqrt(),
                });
            }
        }
        LevelScheme {
            ground_m,
            excited_m,
            lines,
        }
    }

    /// A closed two-level system driven on a σ+ line with unit strength.
    pub fn two_level() -> Self {
        LevelScheme {
            ground_m: vec![0],
            excited_m: vec![1],
            lines: vec![Line {
                ground: 0,
                excited: 0,
                q: 1,
                amplitude: 1.0,
            }],
        }
    }

    pub fn n_ground(&self) -> usize {
        self.ground_m.len()
    }

    pub fn n_excited(&self) -> usize {
        self.excited_m.len()
    }

    pub fn dim(&self) -> usize {
        self.n_ground() + self.n_excited()
    }

    /// Index of excited state `e` in the full state vector.
    pub fn excited_index(&self, e: usize) -> usize {
        self.n_ground() + e
    }

    /// Squared amplitude of the decay of excited state `e` through channel q.
    pub fn branching(&self, e: usize, q: i32) -> f64 {
        self.lines
            .iter()
            .filter(|l| l.excited == e && l.q == q)
            .map(|l| l.amplitude * l.amplitude)
            .sum()
    }

    /// Largest deviation of Σ_q Σ_m c² from 1 over excited states.
    pub fn closure_error(&self) -> f64 {
        (0..self.n_excited())
            .map(|e| ((-1..=1).map(|q| self.branching(e, q)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.closure_error() > CLOSURE_TOLERANCE {
            return Err(Error::invalid(
                "scheme",
                format!("branching sum rule violated by {:e}", self.closure_error()),
            ));
        }
        Ok(())
    }

    /// Dipole lowering operator D_ε = Σ ε_q* c |g⟩⟨e| for polarization ε.
    fn lowering(&self, components: &[C64; 3]) -> CMat {
        let mut d = CMat::zeros(self.dim(), self.dim());
        for l in &self.lines {
            let eps = components[(l.q + 1) as usize].conj();
            d[(l.ground, self.excited_index(l.excited))] += eps * l.amplitude;
        }
        d
    }

    /// Decay operator for channel q, without the rate factor.
    fn channel(&self, q: i32) -> CMat {
        let mut d = CMat::zeros(self.dim(), self.dim());
        for l in self.lines.iter().filter(|l| l.q == q) {
            d[(l.ground, self.excited_index(l.excited))] = C64::new(l.amplitude, 0.0);
        }
        d
    }
}

/// Drive polarization (spherical components ε₋₁, ε₀, ε₊₁ about the cavity axis) and saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivePolarization {
    pub components: [C64; 3],
    pub saturation: f64,
}

impl DrivePolarization {
    pub fn new(components: [C64; 3], saturation: f64) -> Result<Self> {
        let d = DrivePolarization { components, saturation };
        d.validate()?;
        Ok(d)
    }

    pub fn sigma_plus(saturation: f64) -> Self {
        Self::from_real([0.0, 0.0, 1.0], saturation)
    }

    pub fn sigma_minus(saturation: f64) -> Self {
        Self::from_real([1.0, 0.0, 0.0], saturation)
    }

    pub fn pi(saturation: f64) -> Self {
        Self::from_real([0.0, 1.0, 0.0], saturation)
    }

    /// Linear polarization perpendicular to the cavity axis: x̂ = (ê₋₁ − ê₊₁)/√2.
    pub fn transverse_linear(saturation: f64) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_real([h, 0.0, -h], saturation)
    }

    fn from_real(c: [f64; 3], saturation: f64) -> Self {
        DrivePolarization {
            components: c.map(|x| C64::new(x, 0.0)),
            saturation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("saturation", self.saturation)?;
        let n: f64 = self.components.iter().map(|c| c.norm_sqr()).sum();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("polarization", format!("|ε|² = {n}, expected 1")));
        }
        Ok(())
    }

    pub fn weight(&self, q: i32) -> f64 {
        self.components[(q + 1) as usize].norm_sqr()
    }
}

/// Equilibrium atomic state; `rho` carries coherences when the model keeps them.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeemanState {
    pub populations: Vec<f64>,
    pub rho: CMat,
}

impl ZeemanState {
    fn from_populations(p: Vec<f64>) -> Self {
        let rho = CMat::from_diagonal(&DVector::from_iterator(p.len(), p.iter().map(|&x| C64::new(x, 0.0))));
        ZeemanState { populations: p, rho }
    }

    pub fn excited_population(&self, scheme: &LevelScheme) -> f64 {
        self.populations[scheme.n_ground()..].iter().sum()
    }
}

/// A dynamical model producing the equilibrium Zeeman state.
pub trait ZeemanModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn equilibrium(&self, scheme: &LevelScheme, drive: &DrivePolarization) -> Result<ZeemanState>;
}

/// Full optical Bloch equations on the density matrix, coherences included.
pub struct BlochModel;

/// Population rate equations in the cavity-axis basis; coherences dropped.
pub struct RateEquationModel;

fn undriven(scheme: &LevelScheme) -> ZeemanState {
    let g = scheme.n_ground();
    let mut p = vec![0.0; scheme.dim()];
    for x in p.iter_mut().take(g) {
        *x = 1.0 / g as f64;
    }
    ZeemanState::from_populations(p)
}

impl ZeemanModel for BlochModel {
    fn name(&self) -> &'static str {
        "bloch"
    }

    fn equilibrium(&self, scheme: &LevelScheme, drive: &DrivePolarization) -> Result<ZeemanState> {
        scheme.validate()?;
        drive.validate()?;
        if drive.saturation == 0.0 {
            return Ok(undriven(scheme));
        }
        // units of γ: Ω = √(2s), population decay 2
        let omega = (2.0 * drive.saturation).sqrt();
        let mut raise = CMat::zeros(scheme.dim(), scheme.dim());
        for l in &scheme.lines {
            let eps = drive.components[(l.q + 1) as usize];
            raise[(scheme.excited_index(l.excited), l.ground)] += eps * l.amplitude;
        }
        let h = (&raise + raise.adjoint()) * C64::new(omega / 2.0, 0.0);
        let jumps = (-1..=1)
            .map(|q| JumpOperator {
                label: format!("q{q}"),
                op: scheme.channel(q) * C64::new(2f64.sqrt(), 0.0),
            })
            .collect();
        let ss = DirectSolver.solve(&Lindbladian::new(h, jumps))?;
        let rho = ss.rho.into_matrix();
        let populations = (0..scheme.dim()).map(|i| rho[(i, i)].re).collect();
        Ok(ZeemanState { populations, rho })
    }
}

impl ZeemanModel for RateEquationModel {
    fn name(&self) -> &'static str {
        "rate_equations"
    }

    fn equilibrium(&self, scheme: &LevelScheme, drive: &DrivePolarization) -> Result<ZeemanState> {
        scheme.validate()?;
        drive.validate()?;
        if drive.saturation == 0.0 {
            return Ok(undriven(scheme));
        }
        let d = scheme.dim();
        // units of γ: stimulated rate Ω²|ε_q|²c²/2 with Ω² = 2s, decay 2c²
        let mut m = DMatrix::<f64>::zeros(d, d);
        for l in &scheme.lines {
            let (g, e) = (l.ground, scheme.excited_index(l.excited));
            let c2 = l.amplitude * l.amplitude;
            let pump = drive.saturation * drive.weight(l.q) * c2;
            let decay = 2.0 * c2;
            // g → e and e → g by stimulated processes, e → g by decay
            m[(e, g)] += pump;
            m[(g, g)] -= pump;
            m[(g, e)] += pump + decay;
            m[(e, e)] -= pump + decay;
        }
        for c in 0..d {
            m[(0, c)] = 1.0;
        }
        let mut rhs = DVector::zeros(d);
        rhs[0] = 1.0;
        let x = m.lu().solve(&rhs).ok_or(Error::NonConvergence {
            what: "rate-equation steady state",
            residual: f64::INFINITY,
        })?;
        let p: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
        let s: f64 = p.iter().sum();
        Ok(ZeemanState::from_populations(p.into_iter().map(|v| v / s).collect()))
    }
}

pub fn zeeman_models() -> &'static Registry<dyn ZeemanModel> {
    static REG: OnceLock<Registry<dyn ZeemanModel>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn ZeemanModel>::new("zeeman_model", "bloch")
            .register("bloch", "optical Bloch equations with Zeeman coherences", |_| {
                Box::new(BlochModel)
            })
            .register(
                "rate_equations",
                "population rate equations in the cavity-axis basis",
                |_| Box::new(RateEquationModel),
            )
    })
}

pub fn equilibrium_populations(scheme: &LevelScheme, drive: &DrivePolarization, model: &str) -> Result<ZeemanState> {
    zeeman_models().build(model, &())?.equilibrium(scheme, drive)
}

/// Fraction of excited-state decay carried by the q = ±1 channels.
pub fn sigma_fraction(populations: &[f64], scheme: &LevelScheme) -> Result<f64> {
    if populations.len() != scheme.dim() {
        return Err(Error::invalid("populations", "length does not match the scheme"));
    }
    let mut total = 0.0;
    let mut sigma = 0.0;
    for e in 0..scheme.n_excited() {
        let p = populations[scheme.excited_index(e)];
        total += p;
        sigma += p * (scheme.branching(e, 1) + scheme.branching(e, -1));
    }
    if total <= 0.0 {
        return Err(Error::Undefined("no excited-state population".into()));
    }
    Ok(sigma / total)
}

/// Which emitted polarization counts as coupling into the cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavityCollection {
    /// The mode polarization parallel to the drive polarization.
    DrivePolarized,
    /// Both transverse polarizations (all σ± decay).
    BothTransverse,
    /// The σ+ circular mode, as for the probe.
    SingleCircular,
}

/// C′_N/C_N: squared dipole coupling of the equilibrium atom to the collected
/// mode polarization, per unit excited population, relative to the unit-strength
/// cycling transition that sets C_N.
pub fn cooperativity_ratio(
    scheme: &LevelScheme,
    drive: &DrivePolarization,
    collection: CavityCollection,
    model: &str,
) -> Result<f64> {
    let state = equilibrium_populations(scheme, drive, model)?;
    let pe = state.excited_population(scheme);
    if pe <= 0.0 {
        return Err(Error::Undefined("an undriven atom does not fluoresce".into()));
    }
    let coupling = |eps: [C64; 3]| {
        let d = scheme.lowering(&eps);
        (&state.rho * d.adjoint() * &d).trace().re
    };
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let value = match collection {
        CavityCollection::DrivePolarized => coupling(drive.components),
        CavityCollection::BothTransverse => coupling([one, zero, zero]) + coupling([zero, zero, one]),
        CavityCollection::SingleCircular => coupling([zero, zero, one]),
    };
    Ok(value / pe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn branching_closure_and_values() {
        let s = LevelScheme::f2_to_f3();
        assert!(s.closure_error() < CLOSURE_TOLERANCE);
        assert_eq!(s.n_ground(), 5);
        assert_eq!(s.n_excited(), 7);
        // m′ = 0 decays 1/5, 3/5, 1/5 through q = +1, 0, −1
        assert_relative_eq!(s.branching(3, 1), 0.2, max_relative = 1e-14);
        assert_relative_eq!(s.branching(3, 0), 0.6, max_relative = 1e-14);
        assert_relative_eq!(s.branching(6, 1), 1.0, max_relative = 1e-14);
        LevelScheme::two_level().validate().unwrap();
    }

    #[test]
    fn sigma_plus_pumps_into_cycling_pair() {
        let s = LevelScheme::f2_to_f3();
        for model in ["bloch", "rate_equations"] {
            let st = equilibrium_populations(&s, &DrivePolarization::sigma_plus(50.0), model).unwrap();
            let cyc = st.populations[4] + st.populations[s.excited_index(6)];
            assert!((cyc - 1.0).abs() < 1e-9, "{model}: {:?}", st.populations);
            let ratio = cooperativity_ratio(
                &s,
                &DrivePolarization::sigma_plus(50.0),
                CavityCollection::SingleCircular,
                model,
            )
            .unwrap();
            assert_relative_eq!(ratio, 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn undriven_atom_stays_in_ground_manifold() {
        let s = LevelScheme::f2_to_f3();
        let st = equilibrium_populations(&s, &DrivePolarization::pi(0.0), "bloch").unwrap();
        assert_eq!(st.excited_population(&s), 0.0);
        assert!((st.populations.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transverse_drive_is_mirror_symmetric() {
        let s = LevelScheme::f2_to_f3();
        for model in ["bloch", "rate_equations"] {
            let st = equilibrium_populations(&s, &DrivePolarization::transverse_linear(3.0), model).unwrap();
            for i in 0..5 {
                assert!((st.populations[i] - st.populations[4 - i]).abs() < 1e-10);
            }
            for e in 0..7 {
                let (a, b) = (s.excited_index(e), s.excited_index(6 - e));
                assert!((st.populations[a] - st.populations[b]).abs() < 1e-10);
            }
            assert!(st.populations.iter().all(|&p| p >= -1e-12));
            assert!((st.populations.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_fraction_of_uniform_excited_states() {
        let s = LevelScheme::f2_to_f3();
        let mut p = vec![0.0; 12];
        for e in 0..7 {
            p[s.excited_index(e)] = 1.0 / 7.0;
        }
        // brute force over the table: Σ_m′ (1 − b₀(m′))/7
        let pi: f64 = [0.0, 5.0 / 15.0, 8.0 / 15.0, 9.0 / 15.0, 8.0 / 15.0, 5.0 / 15.0, 0.0]
            .iter()
            .sum();
        let want = 1.0 - pi / 7.0;
        assert_relative_eq!(sigma_fraction(&p, &s).unwrap(), want, max_relative = 1e-14);
        let mut cyc = vec![0.0; 12];
        cyc[s.excited_index(6)] = 1.0;
        assert_eq!(sigma_fraction(&cyc, &s).unwrap(), 1.0);
    }

    #[test]
    fn two_level_ratio_is_one() {
        let s = LevelScheme::two_level();
        let r = cooperativity_ratio(
            &s,
            &DrivePolarization::sigma_plus(2.0),
            CavityCollection::DrivePolarized,
            "bloch",
        )
        .unwrap();
        assert_relative_eq!(r, 1.0, max_relative = 1e-10);
        // two-level saturation ρee = ½ s/(1 + s)
        let st = equilibrium_populations(&s, &DrivePolarization::sigma_plus(2.0), "rate_equations").unwrap();
        assert_relative_eq!(st.populations[1], 1.0 / 3.0, max_relative = 1e-12);
        let st = equilibrium_populations(&s, &DrivePolarization::sigma_plus(2.0), "bloch").unwrap();
        assert_relative_eq!(st.populations[1], 1.0 / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn linear_drive_collection_fractions() {
        let s = LevelScheme::f2_to_f3();
        for sat in [1.0, 5.0, 20.0] {
            let d = DrivePolarization::transverse_linear(sat);
            let along = cooperativity_ratio(&s, &d, CavityCollection::DrivePolarized, "bloch").unwrap();
            let both = cooperativity_ratio(&s, &d, CavityCollection::BothTransverse, "bloch").unwrap();
            assert_relative_eq!(along, 5.0 / 9.0, max_relative = 1e-8);
            assert_relative_eq!(both, 7.0 / 9.0, max_relative = 1e-8);
        }
    }
}
