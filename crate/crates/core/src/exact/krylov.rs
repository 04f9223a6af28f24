//! Krylov-subspace time evolution for detuning sweeps, specialized to the
//! two-level Rydberg chain so the time-dependent pieces (Ω, Δ) multiply
//! precomputed structures instead of rebuilding the Hamiltonian each step.

use super::basis::BasisIndex;
use super::DenseState;
use crate::error::{KzqError, Result};
use crate::model::ChainModel;
use crate::schedule::Waveform;
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

const KRYLOV_TOL: f64 = 1e-12;
const KRYLOV_M_MAX: usize = 60;

/// Bookkeeping from a finished [`SweepEvolver::evolve`] run.
#[derive(Debug, Clone, Copy)]
pub struct EvolveStats {
    pub n_steps: usize,
    /// Largest |norm − 1| observed during the evolution.
    pub max_norm_drift: f64,
    /// Number of Krylov steps that had to be recursively halved.
    pub halved_steps: usize,
}

/// Time evolution of a two-level chain under H(t) = Ω(t)·H_x − Δ(t)·N + H_V.
///
/// H_x is the sum of (1/2)σ_i^x, N the total excitation number, and H_V the
/// diagonal interaction fixed by the model.
pub struct SweepEvolver {
    pub basis: BasisIndex,
    /// Interaction energy per basis state (rad/µs).
    static_diag: Vec<f64>,
    /// Excitation count per basis state.
    nexc: Vec<f64>,
    /// Constrained case only: admissible single-flip targets per state.
    flips: Option<Vec<Vec<u32>>>,
}

impl SweepEvolver {
    pub fn new(model: &ChainModel) -> Result<Self> {
        let n = model.n_sites();
        let basis = if model.constrained() {
            BasisIndex::blockade_constrained(n)?
        } else {
            BasisIndex::full(n, 2)?
        };
        let dim = basis.dim();
        if dim > super::SPARSE_DIM_CAP {
            return Err(KzqError::SizeCap {
                dim,
                cap: super::SPARSE_DIM_CAP,
            });
        }

        let mut couplings = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let v = model.pair_coupling(i, j);
                if v != 0.0 {
                    couplings.push((i, j, v));
                }
            }
        }
        let mut static_diag = vec![0.0; dim];
        let mut nexc = vec![0.0; dim];
        for idx in 0..dim {
            let code = basis.code(idx);
            let occ: Vec<usize> = (0..n).filter(|&s| basis.digit(code, s) != 0).collect();
            nexc[idx] = occ.len() as f64;
            let mut e = 0.0;
            for &(i, j, v) in &couplings {
                if basis.digit(code, i) != 0 && basis.digit(code, j) != 0 {
                    e += v;
                }
            }
            static_diag[idx] = e;
        }

        let flips = if basis.constrained {
            let mut table = Vec::with_capacity(dim);
            for idx in 0..dim {
                let code = basis.code(idx);
                let mut targets = Vec::new();
                for s in 0..n {
                    let flipped = basis.with_digit(code, s, 1 - basis.digit(code, s));
                    if let Some(t) = basis.index_of(flipped) {
                        targets.push(t as u32);
                    }
                }
                table.push(targets);
            }
            Some(table)
        } else {
            None
        };

        Ok(Self {
            basis,
            static_diag,
            nexc,
            flips,
        })
    }

    pub fn dim(&self) -> usize {
        self.static_diag.len()
    }

    /// All-ground product state, the sweep's initial condition.
    pub fn initial_state(&self) -> DenseState {
        DenseState::ground(&self.basis)
    }

    /// y = H(Ω, Δ) v.
    pub fn apply(&self, omega: f64, delta: f64, v: &[C64], y: &mut [C64]) {
        let half = 0.5 * omega;
        for (idx, yi) in y.iter_mut().enumerate() {
            *yi = v[idx] * (self.static_diag[idx] - delta * self.nexc[idx]);
        }
        match &self.flips {
            Some(table) => {
                for (idx, targets) in table.iter().enumerate() {
                    let vi = v[idx];
                    if vi == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for &t in targets {
                        y[t as usize] += vi * half;
                    }
                }
            }
            None => {
                let n = self.basis.n_sites;
                for (idx, &vi) in v.iter().enumerate() {
                    if vi == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let code = idx as u64;
                    for s in 0..n {
                        let t = self
                            .basis
                            .with_digit(code, s, 1 - self.basis.digit(code, s));
                        y[t as usize] += vi * half;
                    }
                }
            }
        }
    }

    /// ⟨v|H(Ω, Δ)|v⟩ / ⟨v|v⟩.
    pub fn energy(&self, omega: f64, delta: f64, state: &DenseState) -> f64 {
        let mut y = vec![C64::new(0.0, 0.0); state.dim()];
        self.apply(omega, delta, &state.amplitudes, &mut y);
        let num: f64 = state
            .amplitudes
            .iter()
            .zip(&y)
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        num / state.norm().powi(2)
    }

    /// Advance `state` by `exp(-i H(Ω, Δ) dt)` using an adaptive Lanczos
    /// subspace; recursively halves the step if the subspace cannot reach
    /// tolerance. Returns the number of halvings performed.
    pub fn step(&self, state: &mut DenseState, omega: f64, delta: f64, dt: f64) -> Result<usize> {
        self.step_depth(state, omega, delta, dt, 0)
    }

    fn step_depth(
        &self,
        state: &mut DenseState,
        omega: f64,
        delta: f64,
        dt: f64,
        depth: usize,
    ) -> Result<usize> {
        match self.try_expm(state, omega, delta, dt)? {
            true => Ok(0),
            false => {
                if depth >= 20 {
                    return Err(KzqError::Convergence(format!(
                        "Krylov propagator failed to converge at dt = {dt:.3e}"
                    )));
                }
                let h1 = self.step_depth(state, omega, delta, 0.5 * dt, depth + 1)?;
                let h2 = self.step_depth(state, omega, delta, 0.5 * dt, depth + 1)?;
                Ok(1 + h1 + h2)
            }
        }
    }

    /// One Krylov exponential attempt; `Ok(false)` means the error estimate
    /// stayed above tolerance at the maximum subspace size.
    fn try_expm(
        &self,
        state: &mut DenseState,
        omega: f64,
        delta: f64,
        dt: f64,
    ) -> Result<bool> {
        let dim = self.dim();
        let norm0 = state.norm();
        if norm0 == 0.0 {
            return Err(KzqError::Domain("cannot evolve a zero state".into()));
        }
        let m_cap = KRYLOV_M_MAX.min(dim);
        let mut vs: Vec<Vec<C64>> = Vec::with_capacity(m_cap);
        vs.push(state.amplitudes.iter().map(|a| a / norm0).collect());
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![C64::new(0.0, 0.0); dim];
        let mut happy = false;

        loop {
            let j = alphas.len();
            self.apply(omega, delta, &vs[j], &mut w);
            if j > 0 {
                let b = betas[j - 1];
                for (wi, pi) in w.iter_mut().zip(&vs[j - 1]) {
                    *wi -= pi * b;
                }
            }
            let alpha: f64 = vs[j]
                .iter()
                .zip(&w)
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            for (wi, vi) in w.iter_mut().zip(&vs[j]) {
                *wi -= vi * alpha;
            }
            for vprev in &vs {
                let ovl: C64 = vprev.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                for (wi, pi) in w.iter_mut().zip(vprev) {
                    *wi -= pi * ovl;
                }
            }
            alphas.push(alpha);
            let beta = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            betas.push(beta);
            if beta < 1e-13 || vs.len() == dim {
                happy = true;
                break;
            }
            if alphas.len() >= m_cap {
                break;
            }
            vs.push(w.iter().map(|a| a / beta).collect());
        }

        let m = alphas.len();
        let mut t = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            t[[i, i]] = alphas[i];
            if i + 1 < m {
                t[[i, i + 1]] = betas[i];
                t[[i + 1, i]] = betas[i];
            }
        }
        let (theta, s) = t
            .eigh(UPLO::Lower)
            .map_err(|e| KzqError::Linalg(format!("Krylov tridiagonal eigensolve: {e}")))?;
        // coeff = S exp(-i dt Θ) Sᵀ e₁
        let mut coeff = vec![C64::new(0.0, 0.0); m];
        for k in 0..m {
            let phase = C64::from_polar(1.0, -dt * theta[k]);
            let sk0 = s[[0, k]];
            for (ci, srow) in coeff.iter_mut().zip(s.rows()) {
                *ci += phase * (srow[k] * sk0);
            }
        }
        if !happy {
            let err = betas[m - 1] * coeff[m - 1].norm() * dt.abs().max(1.0);
            if err > KRYLOV_TOL {
                return Ok(false);
            }
        }
        for a in state.amplitudes.iter_mut() {
            *a = C64::new(0.0, 0.0);
        }
        for (vj, cj) in vs.iter().zip(&coeff) {
            let c = cj * norm0;
            for (out, inp) in state.amplitudes.iter_mut().zip(vj) {
                *out += inp * c;
            }
        }
        Ok(true)
    }

    /// Evolve the state over the whole waveform with fixed step `dt`,
    /// sampling (Ω, Δ) at the midpoint of each step. The observer is called
    /// after every step with `(step_index, t_end, state)`.
    pub fn evolve(
        &self,
        state: &mut DenseState,
        waveform: &dyn Waveform,
        dt: f64,
        mut observer: impl FnMut(usize, f64, &DenseState),
    ) -> Result<EvolveStats> {
        if !(dt > 0.0) {
            return Err(KzqError::Domain(format!("time step must be positive, got {dt}")));
        }
        let total = waveform.duration();
        let n_steps = (total / dt).ceil().max(1.0) as usize;
        let dt_eff = total / n_steps as f64;
        let mut max_drift = 0.0f64;
        let mut halved = 0usize;
        for step in 0..n_steps {
            let t = step as f64 * dt_eff;
            let (omega, delta) = waveform.midpoint(t, dt_eff);
            halved += self.step(state, omega, delta, dt_eff)?;
            max_drift = max_drift.max((state.norm() - 1.0).abs());
            observer(step, t + dt_eff, state);
        }
        Ok(EvolveStats {
            n_steps,
            max_norm_drift: max_drift,
            halved_steps: halved,
        })
    }
}

/// Picks the initial detuning for a sweep: the candidate closest to zero for
/// which a full Ω ramp on/off at that detuning returns the chain to the
/// ground state with mean excitation density below `threshold`.
///
/// Fails with the measured (Δ, density) pairs if no candidate is adiabatic.
pub fn calibrate_delta0(
    model: &ChainModel,
    candidates: &[f64],
    omega_max: f64,
    ramp: f64,
    dt: f64,
    threshold: f64,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(KzqError::Domain("no candidate detunings supplied".into()));
    }
    let evolver = SweepEvolver::new(model)?;
    let n = model.n_sites() as f64;
    let mut sorted: Vec<f64> = candidates.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut measured = Vec::new();
    for &delta in &sorted {
        let pulse = crate::schedule::CalibrationPulse {
            delta,
            omega_max,
            ramp,
        };
        let mut state = evolver.initial_state();
        evolver.evolve(&mut state, &pulse, dt, |_, _, _| {})?;
        let density: f64 = (0..model.n_sites())
            .map(|s| state.occupation(&evolver.basis, s))
            .sum::<f64>()
            / n;
        if density < threshold {
            return Ok(delta);
        }
        measured.push((delta, density));
    }
    Err(KzqError::Calibration(measured))
}
