//! Finite-size DMRG with two-site updates: ground states, and excited
//! states through penalty projectors onto previously converged states.

use super::linalg::{split_truncated, KeepSide};
use super::mpo::{mpo_transfer_left, mpo_transfer_right, Mpo, MpoEntries};
use super::mps::{transfer_left, transfer_right, Mps};
use crate::error::{KzqError, Result};
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DmrgOptions {
    /// Bond-dimension ramp: `(d_max, sweeps)` stages run in order.
    pub stages: Vec<(usize, usize)>,
    pub svd_cutoff: f64,
    /// Relative energy change between sweeps that counts as converged.
    pub energy_tol: f64,
    pub lanczos_tol: f64,
    pub max_lanczos: usize,
    pub seed: u64,
}

impl Default for DmrgOptions {
    fn default() -> Self {
        Self {
            stages: vec![(8, 2), (16, 2), (32, 4)],
            svd_cutoff: 1e-10,
            energy_tol: 1e-9,
            lanczos_tol: 1e-10,
            max_lanczos: 40,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DmrgOutcome {
    pub energy: f64,
    pub mps: Mps,
    pub converged: bool,
    pub sweeps: usize,
    /// Energy after each full (left-right-left) sweep.
    pub energy_history: Vec<f64>,
}

/// Variational ground state of the MPO.
pub fn dmrg_ground(mpo: &Mpo, init: &Mps, opts: &DmrgOptions) -> Result<DmrgOutcome> {
    dmrg_run(mpo, init, &[], 0.0, opts)
}

/// Lowest state orthogonal to `below`, found by penalizing overlap with
/// each listed state by `penalty` (which must exceed the target gap).
pub fn dmrg_excited(
    mpo: &Mpo,
    below: &[&Mps],
    penalty: f64,
    init: &Mps,
    opts: &DmrgOptions,
) -> Result<DmrgOutcome> {
    if !(penalty > 0.0) {
        return Err(KzqError::Domain(format!(
            "penalty weight must be positive, got {penalty}"
        )));
    }
    dmrg_run(mpo, init, below, penalty, opts)
}

struct Sweeper<'a> {
    mpo: &'a Mpo,
    entries: Vec<MpoEntries>,
    mps: Mps,
    /// `lenv[i]` covers sites < i; `renv[i]` covers sites ≥ i.
    lenv: Vec<Array3<C64>>,
    renv: Vec<Array3<C64>>,
    below: Vec<&'a Mps>,
    penalty: f64,
    /// Overlap environments against each `below` state.
    plenv: Vec<Vec<Array2<C64>>>,
    prenv: Vec<Vec<Array2<C64>>>,
    rng: ChaCha8Rng,
    opts: &'a DmrgOptions,
}

fn dmrg_run(
    mpo: &Mpo,
    init: &Mps,
    below: &[&Mps],
    penalty: f64,
    opts: &DmrgOptions,
) -> Result<DmrgOutcome> {
    let n = mpo.n_sites();
    if n < 2 {
        return Err(KzqError::Domain("DMRG needs at least 2 sites".into()));
    }
    if init.n_sites() != n || init.local_dim != mpo.local_dim {
        return Err(KzqError::Domain(
            "initial state does not match the MPO geometry".into(),
        ));
    }
    if opts.stages.is_empty() {
        return Err(KzqError::Domain("empty DMRG stage schedule".into()));
    }
    let mut mps = init.clone();
    mps.canonicalize_right()?;
    mps.normalize();

    let entries: Vec<MpoEntries> = (0..n).map(|i| mpo.entries(i)).collect();
    let mut sweeper = Sweeper {
        mpo,
        entries,
        mps,
        lenv: Vec::new(),
        renv: Vec::new(),
        below: below.to_vec(),
        penalty,
        plenv: Vec::new(),
        prenv: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        opts,
    };
    sweeper.rebuild_environments();

    let mut history: Vec<f64> = Vec::new();
    let mut sweeps = 0usize;
    let mut converged = false;
    for &(d_max, stage_sweeps) in &opts.stages {
        converged = false;
        for _ in 0..stage_sweeps {
            let e = sweeper.full_sweep(d_max)?;
            sweeps += 1;
            if let Some(&prev) = history.last() {
                let scale = f64::max(e.abs(), 1.0);
                if (e - prev).abs() < opts.energy_tol * scale {
                    converged = true;
                }
            }
            history.push(e);
            if converged {
                break;
            }
        }
    }
    sweeper.mps.normalize();
    let energy = *history.last().expect("at least one sweep ran");
    Ok(DmrgOutcome {
        energy,
        mps: sweeper.mps,
        converged,
        sweeps,
        energy_history: history,
    })
}

impl<'a> Sweeper<'a> {
    /// Environments for a right-canonical state with the center at site 0.
    fn rebuild_environments(&mut self) {
        let n = self.mps.n_sites();
        let mut triv = Array3::<C64>::zeros((1, 1, 1));
        triv[[0, 0, 0]] = C64::new(1.0, 0.0);
        self.lenv = vec![triv.clone(); n + 1];
        self.renv = vec![triv; n + 1];
        for i in (1..n).rev() {
            self.renv[i] = mpo_transfer_right(
                &self.renv[i + 1],
                &self.entries[i],
                self.mpo.tensors[i].dim().0,
                &self.mps.tensors[i],
                &self.mps.tensors[i],
            );
        }
        self.plenv = vec![vec![Array2::eye(1); n + 1]; self.below.len()];
        self.prenv = vec![vec![Array2::eye(1); n + 1]; self.below.len()];
        for (k, prev) in self.below.iter().enumerate() {
            for i in (1..n).rev() {
                self.prenv[k][i] = transfer_right(
                    &self.prenv[k][i + 1],
                    &prev.tensors[i],
                    &self.mps.tensors[i],
                );
            }
        }
    }

    /// One left-to-right plus right-to-left pass; returns the final local
    /// eigenvalue (the variational energy including any penalty, which
    /// vanishes at convergence for orthogonal states).
    fn full_sweep(&mut self, d_max: usize) -> Result<f64> {
        let n = self.mps.n_sites();
        let mut energy = 0.0;
        for i in 0..n - 1 {
            energy = self.update_bond(i, d_max, true)?;
        }
        for i in (0..n - 1).rev() {
            energy = self.update_bond(i, d_max, false)?;
        }
        Ok(energy)
    }

    fn update_bond(&mut self, i: usize, d_max: usize, to_right: bool) -> Result<f64> {
        let (a, b) = (&self.mps.tensors[i], &self.mps.tensors[i + 1]);
        let (dl, d, _) = a.dim();
        let dr = b.dim().2;
        // θ[al, s1, s2, cr] = Σ_m a[al, s1, m] b[m, s2, cr]
        let am = a
            .view()
            .into_shape((dl * d, a.dim().2))
            .expect("reshape")
            .to_owned();
        let bm = b
            .view()
            .into_shape((b.dim().0, d * dr))
            .expect("reshape")
            .to_owned();
        let theta = am
            .dot(&bm)
            .into_shape((dl, d, d, dr))
            .expect("reshape")
            .to_owned();

        // Penalty vectors in the local two-site basis.
        let mut pens: Vec<Array4<C64>> = Vec::with_capacity(self.below.len());
        for (k, prev) in self.below.iter().enumerate() {
            pens.push(local_overlap_vector(
                &self.plenv[k][i],
                &self.prenv[k][i + 2],
                &prev.tensors[i],
                &prev.tensors[i + 1],
            ));
        }

        let mut theta0 = theta;
        // Small random admixture keeps Lanczos out of invariant subspaces
        // when starting from product states.
        let eps = 1e-6;
        let noise = Array4::from_shape_fn(theta0.raw_dim(), |_| {
            C64::new(self.rng.gen::<f64>() - 0.5, self.rng.gen::<f64>() - 0.5) * eps
        });
        theta0 = theta0 + noise;

        let lenv = self.lenv[i].clone();
        let renv = self.renv[i + 2].clone();
        let e1 = self.entries[i].clone();
        let e2 = self.entries[i + 1].clone();
        let penalty = self.penalty;
        let apply = |t: &Array4<C64>| -> Array4<C64> {
            let mut y = apply_heff(&lenv, &renv, &e1, &e2, t);
            for p in &pens {
                // y += λ · p · ⟨p, t⟩
                let ovl: C64 = p.iter().zip(t.iter()).map(|(a, b)| a.conj() * b).sum();
                let w = ovl * penalty;
                y.zip_mut_with(p, |yi, pi| *yi += pi * w);
            }
            y
        };
        let (energy, ground) = lanczos_local(
            &theta0,
            apply,
            self.opts.lanczos_tol,
            self.opts.max_lanczos,
        )?;

        // Split and shift the center; the carry factor absorbs the norm.
        let m = ground
            .into_shape((dl * d, d * dr))
            .expect("reshape")
            .to_owned();
        let side = if to_right { KeepSide::Left } else { KeepSide::Right };
        let split = split_truncated(&m, d_max, self.opts.svd_cutoff, side)?;
        let chi = split.s.len();
        let cnorm = split.carry.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let carry = split.carry.mapv(|z| z / cnorm);
        if to_right {
            self.mps.tensors[i] = split
                .iso
                .into_shape((dl, d, chi))
                .expect("reshape")
                .to_owned();
            self.mps.tensors[i + 1] = carry
                .into_shape((chi, d, dr))
                .expect("reshape")
                .to_owned();
            self.lenv[i + 1] = mpo_transfer_left(
                &self.lenv[i],
                &self.entries[i],
                self.mpo.tensors[i].dim().3,
                &self.mps.tensors[i],
                &self.mps.tensors[i],
            );
            for (k, prev) in self.below.iter().enumerate() {
                self.plenv[k][i + 1] = transfer_left(
                    &self.plenv[k][i],
                    &prev.tensors[i],
                    &self.mps.tensors[i],
                    None,
                );
            }
        } else {
            self.mps.tensors[i + 1] = split
                .iso
                .into_shape((chi, d, dr))
                .expect("reshape")
                .to_owned();
            self.mps.tensors[i] = carry
                .into_shape((dl, d, chi))
                .expect("reshape")
                .to_owned();
            self.renv[i + 1] = mpo_transfer_right(
                &self.renv[i + 2],
                &self.entries[i + 1],
                self.mpo.tensors[i + 1].dim().0,
                &self.mps.tensors[i + 1],
                &self.mps.tensors[i + 1],
            );
            for (k, prev) in self.below.iter().enumerate() {
                self.prenv[k][i + 1] = transfer_right(
                    &self.prenv[k][i + 2],
                    &prev.tensors[i + 1],
                    &self.mps.tensors[i + 1],
                );
            }
        }
        Ok(energy)
    }
}

/// `y[ab, sb1, sb2, cb] = Σ L[ab, wl, ak] W1 W2 R[cb, wr, ck] θ[ak, sk1, sk2, ck]`.
fn apply_heff(
    lenv: &Array3<C64>,
    renv: &Array3<C64>,
    e1: &MpoEntries,
    e2: &MpoEntries,
    theta: &Array4<C64>,
) -> Array4<C64> {
    let (al, d, _, cl) = theta.dim();
    let mut y = Array4::<C64>::zeros((al, d, d, cl));
    for &(wl, sb1, sk1, wm, c1) in e1 {
        let l = lenv.index_axis(Axis(1), wl);
        for &(wm2, sb2, sk2, wr, c2) in e2 {
            if wm2 != wm {
                continue;
            }
            let ts = theta
                .index_axis(Axis(1), sk1)
                .index_axis(Axis(1), sk2)
                .to_owned();
            let r = renv.index_axis(Axis(1), wr);
            let tmp = l.dot(&ts).dot(&r.t()).mapv(|z| z * (c1 * c2));
            let mut slot = y.index_axis_mut(Axis(1), sb1);
            let mut slot = slot.index_axis_mut(Axis(1), sb2);
            slot += &tmp;
        }
    }
    y
}

/// Local representation `G` of a previous state such that
/// `⟨prev|ψ⟩ = Σ conj(G) ∘ θ` in the current mixed-canonical gauge.
fn local_overlap_vector(
    pl: &Array2<C64>,
    pr: &Array2<C64>,
    prev_a: &Array3<C64>,
    prev_b: &Array3<C64>,
) -> Array4<C64> {
    let d = prev_a.dim().1;
    let (ac, cc) = (pl.ncols(), pr.ncols());
    let mut g = Array4::<C64>::zeros((ac, d, d, cc));
    for s1 in 0..d {
        let pa = prev_a.index_axis(Axis(1), s1).mapv(|z| z.conj());
        let left = pl.t().dot(&pa); // (ac, bp)
        for s2 in 0..d {
            let pb = prev_b.index_axis(Axis(1), s2).mapv(|z| z.conj());
            let full = left.dot(&pb).dot(pr); // (ac, cc)
            let mut slot = g.index_axis_mut(Axis(1), s1);
            let mut slot = slot.index_axis_mut(Axis(1), s2);
            slot += &full;
        }
    }
    // ⟨prev|ψ⟩ = Σ G θ elementwise; conjugate so the inner product reads
    // ⟨g, θ⟩ = Σ conj(g) θ.
    g.mapv(|z| z.conj())
}

/// Lanczos for the lowest eigenpair with a warm start vector.
fn lanczos_local(
    start: &Array4<C64>,
    apply: impl Fn(&Array4<C64>) -> Array4<C64>,
    tol: f64,
    m_max: usize,
) -> Result<(f64, Array4<C64>)> {
    let dim: usize = start.len();
    let m_cap = m_max.min(dim);
    let norm0 = start.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return Err(KzqError::Domain("zero Lanczos start vector".into()));
    }
    let mut vs: Vec<Array4<C64>> = vec![start.mapv(|z| z / norm0)];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    loop {
        let j = alphas.len();
        let mut w = apply(&vs[j]);
        if j > 0 {
            let b = betas[j - 1];
            w.zip_mut_with(&vs[j - 1], |wi, pi| *wi -= pi * b);
        }
        let alpha: f64 = vs[j]
            .iter()
            .zip(w.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        w.zip_mut_with(&vs[j], |wi, vi| *wi -= vi * alpha);
        for vprev in &vs {
            let ovl: C64 = vprev
                .iter()
                .zip(w.iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            w.zip_mut_with(vprev, |wi, pi| *wi -= pi * ovl);
        }
        alphas.push(alpha);
        let beta = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        betas.push(beta);
        let m = alphas.len();
        let done = beta < 1e-13 || m == dim || m >= m_cap || {
            // Residual of the current lowest Ritz pair.
            m >= 4 && {
                let (theta, s) = tridiag_eigh(&alphas, &betas[..m - 1])?;
                beta * s[[m - 1, 0]].abs() <= tol * theta[0].abs().max(1.0)
            }
        };
        if done {
            let (theta, s) = tridiag_eigh(&alphas, &betas[..m - 1])?;
            let mut ground = Array4::<C64>::zeros(start.raw_dim());
            for (j, vj) in vs.iter().enumerate() {
                let cj = s[[j, 0]];
                ground.zip_mut_with(vj, |g, v| *g += v * cj);
            }
            return Ok((theta[0], ground));
        }
        vs.push(w.mapv(|z| z / beta));
    }
}

fn tridiag_eigh(alphas: &[f64], betas: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
    let m = alphas.len();
    let mut t = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        t[[i, i]] = alphas[i];
        if i < betas.len() && i + 1 < m {
            t[[i, i + 1]] = betas[i];
            t[[i + 1, i]] = betas[i];
        }
    }
    let (w, v) = t
        .eigh(UPLO::Lower)
        .map_err(|e| KzqError::Linalg(format!("tridiagonal eigensolve failed: {e}")))?;
    Ok((w.to_vec(), v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_spectrum;
    use crate::model::{rydberg_exp_sum_terms, ExpSumApprox, LatticeSpec};
    use crate::tensornet::mpo::rydberg_mpo;
    use approx::assert_relative_eq;

    fn setup(n: usize, rb: f64, delta: f64, omega: f64) -> (Mpo, Vec<(f64, crate::exact::DenseState)>) {
        let lattice = LatticeSpec::new(n, rb, 1.0).unwrap();
        let approx = ExpSumApprox::published();
        let mpo = rydberg_mpo(&lattice, delta, omega, &approx).unwrap();
        let terms = rydberg_exp_sum_terms(&lattice, delta, omega, &approx).unwrap();
        let spectrum = exact_spectrum(&terms, 3).unwrap();
        (mpo, spectrum)
    }

    #[test]
    fn ground_state_matches_dense() {
        let n = 10;
        let (mpo, spectrum) = setup(n, 1.69, 1.2, 1.0);
        let init = Mps::all_ground(n, 2).unwrap();
        let out = dmrg_ground(&mpo, &init, &DmrgOptions::default()).unwrap();
        assert!(out.converged, "history {:?}", out.energy_history);
        assert_relative_eq!(out.energy, spectrum[0].0, epsilon = 1e-7);
        // State overlap with the dense ground state.
        let dense = out.mps.to_dense().unwrap();
        let fid = spectrum[0]
            .1
            .fidelity(&crate::exact::DenseState::from_amplitudes(dense));
        assert!(fid > 1.0 - 1e-7, "fidelity {fid}");
    }

    #[test]
    fn energy_history_is_nonincreasing() {
        let n = 8;
        let (mpo, _) = setup(n, 1.5, 0.5, 1.3);
        let init = Mps::all_ground(n, 2).unwrap();
        let out = dmrg_ground(&mpo, &init, &DmrgOptions::default()).unwrap();
        for w in out.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "history {:?}", out.energy_history);
        }
    }

    #[test]
    fn excited_state_matches_dense_gap() {
        let n = 8;
        let (mpo, spectrum) = setup(n, 1.69, 0.8, 1.1);
        let init = Mps::all_ground(n, 2).unwrap();
        let opts = DmrgOptions::default();
        let ground = dmrg_ground(&mpo, &init, &opts).unwrap();
        let excited = dmrg_excited(&mpo, &[&ground.mps], 10.0, &init, &opts).unwrap();
        assert_relative_eq!(ground.energy, spectrum[0].0, epsilon = 1e-7);
        assert_relative_eq!(excited.energy, spectrum[1].0, epsilon = 1e-5);
        let ovl = ground.mps.overlap(&excited.mps).unwrap().norm();
        assert!(ovl < 1e-4, "residual overlap {ovl}");
    }

    #[test]
    fn bond_dimension_cap_is_respected() {
        let n = 12;
        let (mpo, _) = setup(n, 1.69, 2.0, 1.5);
        let init = Mps::all_ground(n, 2).unwrap();
        let opts = DmrgOptions {
            stages: vec![(4, 2), (6, 2)],
            ..DmrgOptions::default()
        };
        let out = dmrg_ground(&mpo, &init, &opts).unwrap();
        assert!(out.mps.max_bond_dim() <= 6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mpo, _) = setup(6, 1.5, 0.0, 1.0);
        let wrong = Mps::all_ground(5, 2).unwrap();
        assert!(dmrg_ground(&mpo, &wrong, &DmrgOptions::default()).is_err());
        let init = Mps::all_ground(6, 2).unwrap();
        assert!(dmrg_excited(&mpo, &[], -1.0, &init, &DmrgOptions::default()).is_err());
    }
}
