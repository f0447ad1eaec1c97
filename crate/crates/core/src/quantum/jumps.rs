//! Monte Carlo wavefunction (quantum jump) trajectories.
//!
//! Time runs on an integer tick grid. The non-Hermitian evolution uses a
//! ladder of exact propagators exp(−iH_eff·Δt/2ᵏ); a jump is located by
//! bisection to one tick once the squared norm falls below the drawn
//! threshold. Jump times are the tick at which the threshold is crossed, so
//! successive jumps are strictly ordered.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generator_from, Operators, SystemSpec};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::lindblad::{CMat, CVec, C64, I};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Cavity,
    Atom(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub tick: u64,
    /// µs.
    pub time: f64,
    pub channel: Channel,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub seed: u64,
    pub jumps: Vec<JumpEvent>,
    /// Normalized state at `t_end`.
    pub final_state: CVec,
    /// Time-averaged ⟨a†a⟩ after burn-in.
    pub mean_photons: f64,
    /// Time-averaged Σⱼ⟨σⱼ†σⱼ⟩ after burn-in.
    pub mean_excitation: f64,
    pub cavity_jumps: usize,
    pub atom_jumps: usize,
    /// Observation time after burn-in, µs.
    pub observed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpConfig {
    /// Trajectory length, µs.
    pub t_end: f64,
    /// Initial interval excluded from averages and rates, µs.
    pub burn_in: f64,
    /// Coarse propagation step, µs.
    pub step: f64,
    /// Bisection depth; one tick is step/2^levels.
    pub levels: u32,
    pub n_traj: usize,
    pub seed: u64,
}

impl JumpConfig {
    pub fn new(t_end: f64, step: f64, n_traj: usize, seed: u64) -> Self {
        JumpConfig {
            t_end,
            burn_in: 0.0,
            step,
            levels: 20,
            n_traj,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("t_end", self.t_end)?;
        ensure_positive("step", self.step)?;
        ensure_non_negative("burn_in", self.burn_in)?;
        if self.burn_in >= self.t_end {
            return Err(Error::invalid("burn_in", "must be shorter than t_end"));
        }
        if self.levels > 40 {
            return Err(Error::invalid("levels", "at most 40 bisection levels"));
        }
        Ok(())
    }
}

/// Mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            value: mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// |value − target| ≤ k·stderr, with an absolute floor for zero-variance estimates.
    pub fn agrees_with(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= (k * self.stderr).max(floor)
    }
}

#[derive(Debug, Clone)]
pub struct JumpEnsemble {
    pub records: Vec<TrajectoryRecord>,
    pub photons: Estimate,
    pub excitation: Estimate,
    /// Cavity-channel jumps per µs.
    pub cavity_rate: Estimate,
    /// Atomic-channel jumps per µs.
    pub atom_rate: Estimate,
    /// Fraction of jumps through the cavity channel (ratio estimator).
    pub cavity_fraction: Estimate,
}

struct Propagator {
    ladder: Vec<CMat>,
    jumps: Vec<(Channel, CMat)>,
    photon_diag: Vec<f64>,
    excitation_diag: Vec<f64>,
}

impl Propagator {
    fn new(spec: &SystemSpec, cfg: &JumpConfig) -> Self {
        let ops = Operators::new(spec.fock_cutoff, spec.n_atoms());
        let gen = generator_from(spec, &ops);
        let heff = gen.effective_hamiltonian();
        let ladder = (0..=cfg.levels)
            .map(|k| (&heff * (-I * (cfg.step / 2f64.powi(k as i32)))).exp())
            .collect();
        let jumps = gen
            .jumps
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let ch = if i == 0 { Channel::Cavity } else { Channel::Atom(i - 1) };
                (ch, j.op.clone())
            })
            .collect();
        let photon_diag = ops.number.diagonal().iter().map(|c| c.re).collect();
        let excitation_diag = (0..ops.number.nrows())
            .map(|i| ops.sigma.iter().map(|s| (s.adjoint() * s)[(i, i)].re).sum())
            .collect();
        Propagator {
            ladder,
            jumps,
            photon_diag,
            excitation_diag,
        }
    }

    fn diag_expect(diag: &[f64], psi: &CVec) -> f64 {
        let norm = psi.norm_squared();
        psi.iter().zip(diag).map(|(c, d)| c.norm_sqr() * d).sum::<f64>() / norm
    }
}

struct Averages {
    burn_in: u64,
    photons: f64,
    excitation: f64,
    weight: u64,
}

impl Averages {
    /// Trapezoid rule over one step from `from` to `to`.
    fn add(&mut self, prop: &Propagator, from: &CVec, to: &CVec, start: u64, end: u64) {
        if end <= self.burn_in {
            return;
        }
        let w = (end - start.max(self.burn_in)) as f64;
        let mid = |diag: &[f64]| 0.5 * (Propagator::diag_expect(diag, from) + Propagator::diag_expect(diag, to));
        self.photons += w * mid(&prop.photon_diag);
        self.excitation += w * mid(&prop.excitation_diag);
        self.weight += w as u64;
    }
}

fn run_trajectory(prop: &Propagator, cfg: &JumpConfig, dim: usize, index: usize) -> TrajectoryRecord {
    let levels = cfg.levels;
    let coarse_ticks = 1u64 << levels;
    let tick = cfg.step / coarse_ticks as f64;
    let total = ((cfg.t_end / cfg.step).round() as u64).max(1) * coarse_ticks;
    let burn_in = (cfg.burn_in / tick).round() as u64;
    let mut rng = rng::stream(cfg.seed, index as u64);

    let mut psi = CVec::zeros(dim);
    psi[0] = C64::new(1.0, 0.0);
    let mut threshold: f64 = rng.random();
    let mut t = 0u64;
    let mut jumps = Vec::new();
    let mut avg = Averages {
        burn_in,
        photons: 0.0,
        excitation: 0.0,
        weight: 0,
    };
    let ticks_of = |k: u32| 1u64 << (levels - k);

    while t < total {
        let remaining = total - t;
        // largest ladder step that fits
        let mut k = 0;
        while ticks_of(k) > remaining {
            k += 1;
        }
        let cand = &prop.ladder[k as usize] * &psi;
        if cand.norm_squared() > threshold {
            avg.add(prop, &psi, &cand, t, t + ticks_of(k));
            t += ticks_of(k);
            psi = cand;
            continue;
        }
        // the threshold is crossed inside this step: bisect down to one tick
        for l in k + 1..=levels {
            let c = &prop.ladder[l as usize] * &psi;
            if c.norm_squared() > threshold {
                avg.add(prop, &psi, &c, t, t + ticks_of(l));
                t += ticks_of(l);
                psi = c;
            }
        }
        let last = &prop.ladder[levels as usize] * &psi;
        avg.add(prop, &psi, &last, t, t + 1);
        psi = last;
        t += 1;

        let weights: Vec<f64> = prop.jumps.iter().map(|(_, a)| (a * &psi).norm_squared()).collect();
        let total_w: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total_w;
        let mut chosen = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= w;
        }
        let (channel, op) = &prop.jumps[chosen];
        let next = op * &psi;
        let n = next.norm();
        psi = next / C64::new(n, 0.0);
        threshold = rng.random();
        jumps.push(JumpEvent {
            tick: t,
            time: t as f64 * tick,
            channel: *channel,
        });
    }

    let observed = avg.weight as f64 * tick;
    let after: Vec<&JumpEvent> = jumps.iter().filter(|j| j.tick > burn_in).collect();
    let cavity_jumps = after.iter().filter(|j| j.channel == Channel::Cavity).count();
    let atom_jumps = after.len() - cavity_jumps;
    let w = avg.weight.max(1) as f64;
    let norm = psi.norm();
    TrajectoryRecord {
        index,
        seed: cfg.seed,
        jumps,
        final_state: psi / C64::new(norm, 0.0),
        mean_photons: avg.photons / w,
        mean_excitation: avg.excitation / w,
        cavity_jumps,
        atom_jumps,
        observed,
    }
}

/// Runs `cfg.n_traj` trajectories from vacuum with all atoms in the ground state.
///
/// Trajectory i uses RNG stream i of `cfg.seed`; results are independent of
/// thread count.
pub fn quantum_jump_ensemble(spec: &SystemSpec, cfg: &JumpConfig) -> Result<JumpEnsemble> {
    spec.validate()?;
    cfg.validate()?;
    if cfg.n_traj == 0 {
        return Err(Error::invalid("n_traj", "need at least one trajectory"));
    }
    let prop = Propagator::new(spec, cfg);
    let dim = spec.dim();
    let records: Vec<TrajectoryRecord> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| run_trajectory(&prop, cfg, dim, i))
        .collect();

    let photons: Vec<f64> = records.iter().map(|r| r.mean_photons).collect();
    let excitation: Vec<f64> = records.iter().map(|r| r.mean_excitation).collect();
    let cav: Vec<f64> = records.iter().map(|r| r.cavity_jumps as f64 / r.observed).collect();
    let atom: Vec<f64> = records.iter().map(|r| r.atom_jumps as f64 / r.observed).collect();

    let c: Vec<f64> = records.iter().map(|r| r.cavity_jumps as f64).collect();
    let all: Vec<f64> = records.iter().map(|r| (r.cavity_jumps + r.atom_jumps) as f64).collect();
    let sum_all: f64 = all.iter().sum();
    let cavity_fraction = if sum_all > 0.0 {
        let f = c.iter().sum::<f64>() / sum_all;
        let z: Vec<f64> = c.iter().zip(&all).map(|(ci, ai)| ci - f * ai).collect();
        let ez = Estimate::from_samples(&z);
        let mean_all = sum_all / records.len() as f64;
        Estimate {
            value: f,
            stderr: ez.stderr / mean_all,
        }
    } else {
        Estimate {
            value: 0.0,
            stderr: 0.0,
        }
    };

    Ok(JumpEnsemble {
        photons: Estimate::from_samples(&photons),
        excitation: Estimate::from_samples(&excitation),
        cavity_rate: Estimate::from_samples(&cav),
        atom_rate: Estimate::from_samples(&atom),
        cavity_fraction,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PhysicalParams;
    use crate::quantum::steady_state;

    fn moderate() -> PhysicalParams {
        PhysicalParams {
            g: 15.0,
            kappa: 500.0,
            gamma: 1.0,
            ..PhysicalParams::RB87_MICROCAVITY
        }
    }

    #[test]
    fn undriven_vacuum_never_jumps() {
        let spec = SystemSpec::single_atom(moderate(), 0.0, 0.0);
        let ens = quantum_jump_ensemble(&spec, &JumpConfig::new(5.0, 0.01, 1, 4)).unwrap();
        assert!(ens.records[0].jumps.is_empty());
        assert_eq!(ens.photons.value, 0.0);
    }

    #[test]
    fn jump_times_strictly_increase_and_deterministic() {
        let spec = SystemSpec::single_atom(moderate(), 0.0, 2.0);
        let cfg = JumpConfig::new(5.0, 0.01, 8, 21);
        let a = quantum_jump_ensemble(&spec, &cfg).unwrap();
        let b = quantum_jump_ensemble(&spec, &cfg).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.jumps, rb.jumps);
            assert!(ra.jumps.windows(2).all(|w| w[0].tick < w[1].tick));
            assert!((ra.final_state.norm() - 1.0).abs() < 1e-12);
        }
        assert!(a.records.iter().any(|r| !r.jumps.is_empty()));
    }

    #[test]
    fn driven_cavity_jump_rate() {
        let p = moderate();
        let spec = SystemSpec::empty_cavity(p, 0.2 * p.kappa).with_cutoff(6);
        let mut cfg = JumpConfig::new(0.2, 0.0005, 200, 5);
        cfg.burn_in = 0.01;
        let ens = quantum_jump_ensemble(&spec, &cfg).unwrap();
        let ss = steady_state(&spec).unwrap();
        let rate = ss.cavity_emission_rate();
        assert!(
            ens.cavity_rate.agrees_with(rate, 3.0, 0.0),
            "{:?} vs {rate}",
            ens.cavity_rate
        );
        assert!(ens.photons.agrees_with(ss.photons(), 3.0, 1e-3 * ss.photons()));
    }
}
