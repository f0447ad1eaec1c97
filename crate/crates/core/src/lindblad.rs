//! Lindblad generators, density operators and steady-state solvers.
//!
//! dρ/dt = −i[H, ρ] + Σₖ (LₖρLₖ† − ½{Lₖ†Lₖ, ρ}). Matrices are vectorized
//! column-major, so vec(AρB) = (Bᵀ ⊗ A)·vec(ρ).

use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Normalized residual accepted for a steady state.
pub const STEADY_STATE_TOLERANCE: f64 = 1e-10;
/// Hermiticity, trace and positivity tolerance for [`DensityOperator`].
pub const DENSITY_TOLERANCE: f64 = 1e-10;

/// Above this Hilbert dimension the `auto` solver switches to GMRES.
pub const AUTO_DIRECT_MAX_DIM: usize = 48;

#[derive(Debug, Clone)]
pub struct JumpOperator {
    pub label: String,
    pub op: CMat,
}

#[derive(Debug, Clone)]
pub struct Lindbladian {
    pub hamiltonian: CMat,
    pub jumps: Vec<JumpOperator>,
}

impl Lindbladian {
    pub fn new(hamiltonian: CMat, jumps: Vec<JumpOperator>) -> Self {
        Lindbladian { hamiltonian, jumps }
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    /// L[ρ].
    pub fn apply(&self, rho: &CMat) -> CMat {
        let h = &self.hamiltonian;
        let mut out = (h * rho - rho * h) * (-I);
        for j in &self.jumps {
            let l = &j.op;
            let ld = l.adjoint();
            let ldl = &ld * l;
            out += l * rho * &ld - (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0);
        }
        out
    }

    /// H_eff = H − (i/2)·Σ Lₖ†Lₖ.
    pub fn effective_hamiltonian(&self) -> CMat {
        let mut h = self.hamiltonian.clone();
        for j in &self.jumps {
            h -= (j.op.adjoint() * &j.op) * (I * 0.5);
        }
        h
    }

    /// Dense d²×d² superoperator acting on column-major vec(ρ).
    pub fn superoperator(&self) -> CMat {
        let d = self.dim();
        let id = CMat::identity(d, d);
        let h = &self.hamiltonian;
        let mut s = (id.kronecker(h) - h.transpose().kronecker(&id)) * (-I);
        for j in &self.jumps {
            let l = &j.op;
            let ldl = l.adjoint() * l;
            s += l.conjugate().kronecker(l);
            s -= (id.kronecker(&ldl) + ldl.transpose().kronecker(&id)) * C64::new(0.5, 0.0);
        }
        s
    }

    /// Upper bound on the generator magnitude used to normalize residuals.
    pub fn rate_scale(&self) -> f64 {
        let h = self.hamiltonian.norm();
        let d: f64 = self.jumps.iter().map(|j| j.op.norm_squared()).sum();
        (h + d).max(f64::MIN_POSITIVE)
    }

    /// ‖L[ρ]‖_F / rate_scale.
    pub fn residual(&self, rho: &CMat) -> f64 {
        self.apply(rho).norm() / self.rate_scale()
    }

    /// Fixed-step RK4 integration of the master equation.
    pub fn propagate(&self, rho: &CMat, dt: f64, steps: usize) -> CMat {
        let mut r = rho.clone();
        let half = C64::new(dt / 2.0, 0.0);
        let full = C64::new(dt, 0.0);
        for _ in 0..steps {
            let k1 = self.apply(&r);
            let k2 = self.apply(&(&r + &k1 * half));
            let k3 = self.apply(&(&r + &k2 * half));
            let k4 = self.apply(&(&r + &k3 * full));
            r += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);
        }
        r
    }
}

/// A validated density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMat,
}

impl DensityOperator {
    /// Checks Hermiticity, unit trace and positivity at [`DENSITY_TOLERANCE`].
    pub fn new(matrix: CMat) -> Result<Self> {
        let rho = DensityOperator { matrix };
        rho.check(DENSITY_TOLERANCE)?;
        Ok(rho)
    }

    pub fn pure(state: &CVec) -> Result<Self> {
        let n = state.norm();
        if n == 0.0 {
            return Err(Error::invalid("state", "zero vector"));
        }
        let psi = state / C64::new(n, 0.0);
        Self::new(&psi * psi.adjoint())
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let m = &self.matrix;
        if !m.is_square() {
            return Err(Error::invalid("density", "matrix is not square"));
        }
        let herm = (m - m.adjoint()).norm();
        if herm >= tol {
            return Err(Error::invalid("density", format!("not Hermitian: ‖ρ−ρ†‖ = {herm:e}")));
        }
        let tr = m.trace();
        if (tr - C64::new(1.0, 0.0)).norm() >= tol {
            return Err(Error::invalid("density", format!("trace {tr} differs from 1")));
        }
        let min = self.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(Error::invalid("density", format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigen().eigenvalues.iter().cloned().collect()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Tr(ρ·A).
    pub fn expect(&self, op: &CMat) -> C64 {
        (&self.matrix * op).trace()
    }
}

/// Makes a numerically obtained matrix exactly Hermitian with unit trace.
pub fn hermitize(m: &CMat) -> CMat {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let tr = h.trace().re;
    h / C64::new(tr, 0.0)
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityOperator,
    /// ‖L[ρ]‖_F / rate_scale.
    pub residual: f64,
    pub solver: &'static str,
}

pub trait SteadyStateSolver: Send + Sync {
    fn name(&self) -> &'static str;
    /// Raw stationary matrix, before hermitization and validation.
    fn solve_raw(&self, gen: &Lindbladian) -> Result<CMat>;

    fn solve(&self, gen: &Lindbladian) -> Result<SteadyState> {
        let raw = self.solve_raw(gen)?;
        let m = hermitize(&raw);
        let residual = gen.residual(&m);
        if !residual.is_finite() || residual >= STEADY_STATE_TOLERANCE {
            return Err(Error::NonConvergence {
                what: "steady state",
                residual,
            });
        }
        let rho = DensityOperator::new(m).map_err(|_| Error::NonConvergence {
            what: "steady state positivity",
            residual,
        })?;
        Ok(SteadyState {
            rho,
            residual,
            solver: self.name(),
        })
    }
}

/// Dense LU on the vectorized generator with one diagonal row replaced by the trace condition.
pub struct DirectSolver;

/// Restarted GMRES on the same constrained system, matrix-free.
pub struct GmresSolver {
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for GmresSolver {
    fn default() -> Self {
        GmresSolver {
            restart: 80,
            max_iterations: 40_000,
        }
    }
}

/// Direct for small dimensions, GMRES otherwise.
pub struct AutoSolver;

fn unvec(x: &CVec, d: usize) -> CMat {
    CMat::from_column_slice(d, d, x.as_slice())
}

fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

impl SteadyStateSolver for DirectSolver {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn solve_raw(&self, gen: &Lindbladian) -> Result<CMat> {
        let d = gen.dim();
        let scale = gen.rate_scale();
        let mut s = gen.superoperator() / C64::new(scale, 0.0);
        for c in 0..d * d {
            s[(0, c)] = C64::new(0.0, 0.0);
        }
        for i in 0..d {
            s[(0, i * d + i)] = C64::new(1.0, 0.0);
        }
        let mut b = CVec::zeros(d * d);
        b[0] = C64::new(1.0, 0.0);
        let lu = s.clone().lu();
        let mut x = lu.solve(&b).ok_or(Error::NonConvergence {
            what: "steady state (singular generator)",
            residual: f64::INFINITY,
        })?;
        // one step of iterative refinement
        let r = &b - &s * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
        Ok(unvec(&x, d))
    }
}

impl SteadyStateSolver for GmresSolver {
    fn name(&self) -> &'static str {
        "gmres"
    }

    fn solve_raw(&self, gen: &Lindbladian) -> Result<CMat> {
        let d = gen.dim();
        let scale = C64::new(1.0 / gen.rate_scale(), 0.0);
        let apply = |x: &CVec| {
            let rho = unvec(x, d);
            let mut out = vec_of(&(gen.apply(&rho) * scale));
            out[0] = rho.trace();
            out
        };
        let mut b = CVec::zeros(d * d);
        b[0] = C64::new(1.0, 0.0);
        let mut x0 = CMat::zeros(d, d);
        x0[(0, 0)] = C64::new(1.0, 0.0);
        let (x, rel) = gmres(apply, &b, vec_of(&x0), self.restart, self.max_iterations, 1e-14);
        if !rel.is_finite() || rel > 1e-9 {
            return Err(Error::NonConvergence {
                what: "steady state (gmres)",
                residual: rel,
            });
        }
        Ok(unvec(&x, d))
    }
}

impl SteadyStateSolver for AutoSolver {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn solve_raw(&self, gen: &Lindbladian) -> Result<CMat> {
        if gen.dim() <= AUTO_DIRECT_MAX_DIM {
            DirectSolver.solve_raw(gen)
        } else {
            GmresSolver::default().solve_raw(gen)
        }
    }
}

pub fn steady_state_solvers() -> &'static Registry<dyn SteadyStateSolver> {
    static REG: OnceLock<Registry<dyn SteadyStateSolver>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<dyn SteadyStateSolver>::new("steady_state_solver", "auto")
            .register("auto", "direct LU up to dimension 48, GMRES above", |_| {
                Box::new(AutoSolver)
            })
            .register("direct", "dense LU on the trace-constrained superoperator", |_| {
                Box::new(DirectSolver)
            })
            .register("gmres", "matrix-free restarted GMRES", |_| {
                Box::new(GmresSolver::default())
            })
    })
}

/// Restarted GMRES. Returns the solution and the final relative residual ‖b − Ax‖/‖b‖.
pub fn gmres(
    apply: impl Fn(&CVec) -> CVec,
    b: &CVec,
    mut x: CVec,
    restart: usize,
    max_iterations: usize,
    tol: f64,
) -> (CVec, f64) {
    let bnorm = b.norm().max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    loop {
        let r = b - apply(&x);
        let beta = r.norm();
        if beta / bnorm <= tol || iterations >= max_iterations {
            return (x, beta / bnorm);
        }
        let m = restart;
        let mut v: Vec<CVec> = Vec::with_capacity(m + 1);
        v.push(&r / C64::new(beta, 0.0));
        let mut h = DMatrix::<C64>::zeros(m + 1, m);
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = CVec::zeros(m + 1);
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        while k < m && iterations < max_iterations {
            iterations += 1;
            let mut w = apply(&v[k]);
            for (i, vi) in v.iter().enumerate() {
                let hij = vi.dotc(&w);
                h[(i, k)] = hij;
                w -= vi * hij;
            }
            let wn = w.norm();
            h[(k + 1, k)] = C64::new(wn, 0.0);
            for i in 0..k {
                let t = h[(i, k)] * cs[i] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i].conj() * h[(i, k)] + h[(i + 1, k)] * cs[i];
                h[(i, k)] = t;
            }
            let (h1, h2) = (h[(k, k)], h[(k + 1, k)]);
            let r = (h1.norm_sqr() + h2.norm_sqr()).sqrt();
            if h1.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = C64::new(1.0, 0.0);
            } else {
                cs[k] = h1.norm() / r;
                sn[k] = (h1 / h1.norm()) * h2.conj() / r;
            }
            h[(k, k)] = cs[k] * h1 + sn[k] * h2;
            h[(k + 1, k)] = C64::new(0.0, 0.0);
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            k += 1;
            if g[k].norm() / bnorm <= tol || wn == 0.0 {
                break;
            }
            v.push(w / C64::new(wn, 0.0));
        }
        let mut y = CVec::zeros(k);
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[(i, j)] * y[j];
            }
            y[i] = s / h[(i, i)];
        }
        for (i, yi) in y.iter().enumerate() {
            x += &v[i] * *yi;
        }
    }
}

/// Serializable summary of a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub dim: usize,
    pub residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn qubit_decay(gamma: f64, omega: f64) -> Lindbladian {
        let mut sm = CMat::zeros(2, 2);
        sm[(0, 1)] = C64::new(1.0, 0.0);
        let h = (sm.adjoint() + &sm) * C64::new(omega / 2.0, 0.0);
        Lindbladian::new(
            h,
            vec![JumpOperator {
                label: "decay".into(),
                op: sm * C64::new(gamma.sqrt(), 0.0),
            }],
        )
    }

    fn random_density(d: usize, seed: u64) -> CMat {
        let mut rng = crate::rng::stream(seed, 0);
        let a = CMat::from_fn(d, d, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let m = &a * a.adjoint();
        let tr = m.trace();
        m / tr
    }

    #[test]
    fn resonance_fluorescence_matches_analytic() {
        // driven two-level atom: ρee = (Ω²/4)/(Γ²/4 + Ω²/2)
        let (g, om) = (1.0, 0.7);
        let gen = qubit_decay(g, om);
        for solver in ["direct", "gmres", "auto"] {
            let ss = steady_state_solvers().build(solver, &()).unwrap().solve(&gen).unwrap();
            let pe = ss.rho.matrix()[(1, 1)].re;
            let want = (om * om / 4.0) / (g * g / 4.0 + om * om / 2.0);
            assert!((pe - want).abs() < 1e-12, "{solver}: {pe} vs {want}");
            assert!(ss.residual < STEADY_STATE_TOLERANCE);
        }
    }

    #[test]
    fn superoperator_matches_apply() {
        let gen = qubit_decay(0.3, 1.1);
        let rho = random_density(2, 3);
        let via_sup = unvec(&(gen.superoperator() * vec_of(&rho)), 2);
        assert!((via_sup - gen.apply(&rho)).norm() < 1e-14);
    }

    #[test]
    fn trace_preserved_and_hermiticity_kept() {
        let gen = qubit_decay(0.3, 1.1);
        for seed in 0..10 {
            let rho = random_density(2, seed);
            assert!(gen.apply(&rho).trace().norm() < 1e-12);
            let later = gen.propagate(&rho, 0.01, 200);
            assert!((&later - later.adjoint()).norm() < 1e-12);
            DensityOperator::new(hermitize(&later)).unwrap();
        }
    }

    #[test]
    fn density_validation() {
        let mut bad = CMat::identity(2, 2) * C64::new(0.5, 0.0);
        bad[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityOperator::new(bad).is_err());
        let neg = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(1.2, 0.0), C64::new(-0.2, 0.0)]));
        assert!(DensityOperator::new(neg).is_err());
        let psi = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let p = DensityOperator::pure(&psi).unwrap();
        assert!((p.expect(&CMat::identity(2, 2)).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gmres_solves_small_system() {
        let a = CMat::from_fn(6, 6, |i, j| {
            C64::new(
                if i == j { 4.0 } else { 1.0 / (1.0 + i as f64 + j as f64) },
                0.1 * (i as f64 - j as f64),
            )
        });
        let b = CVec::from_fn(6, |i, _| C64::new(i as f64, 1.0));
        let (x, rel) = gmres(|v| &a * v, &b, CVec::zeros(6), 3, 200, 1e-14);
        assert!(rel < 1e-13);
        assert!((&a * x - b).norm() < 1e-12);
    }
}
