//! Dense/sparse exact backend: spectrum, Krylov time evolution, and
//! projective sampling. Serves as the brute-force oracle for the tensor
//! network backend at small system sizes.

pub mod basis;
pub mod krylov;

pub use basis::BasisIndex;
pub use krylov::{EvolveStats, SweepEvolver};

use crate::error::{KzqError, Result};
use crate::model::HamiltonianTerms;
use crate::shots::ShotEnsemble;
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DENSE_DIM_CAP: usize = 1 << 14;
pub const SPARSE_DIM_CAP: usize = 1 << 20;
/// Above this dimension operators are applied matrix-free.
const MATERIALIZE_CAP: usize = 1 << 12;

/// Complex amplitude vector over a [`BasisIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub amplitudes: Vec<C64>,
}

impl DenseState {
    pub fn ground(basis: &BasisIndex) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
        amplitudes[basis.ground_index()] = C64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Self {
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.iter_mut().for_each(|a| *a /= n);
        }
    }

    /// |⟨self|other⟩|².
    pub fn fidelity(&self, other: &DenseState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            .norm_sqr()
    }

    /// ⟨n_site⟩ for the given basis.
    pub fn occupation(&self, basis: &BasisIndex, site: usize) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(idx, _)| basis.digit(basis.code(*idx), site) != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Connected density-density correlation map G(i,j) = ⟨n_i n_j⟩ − ⟨n_i⟩⟨n_j⟩.
    pub fn correlation_map(&self, basis: &BasisIndex) -> Array2<f64> {
        let n = basis.n_sites;
        let mut means = vec![0.0; n];
        let mut joint = Array2::<f64>::zeros((n, n));
        for (idx, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let code = basis.code(idx);
            let occupied: Vec<usize> =
                (0..n).filter(|&s| basis.digit(code, s) != 0).collect();
            for &i in &occupied {
                means[i] += p;
                for &j in &occupied {
                    joint[[i, j]] += p;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                joint[[i, j]] -= means[i] * means[j];
            }
        }
        joint
    }
}

struct SiteAction {
    site: usize,
    /// Off-diagonal entries grouped by input digit: `by_in[in] = [(out, val)]`.
    by_in: Vec<Vec<(usize, C64)>>,
}

struct PairAction {
    i: usize,
    j: usize,
    /// `by_in[a_in*d + b_in] = [(a_out, b_out, val)]`, off-diagonal only.
    by_in: Vec<Vec<(usize, usize, C64)>>,
}

/// Matrix-free application of a Hamiltonian term list over a basis.
pub struct TermOperator {
    pub basis: BasisIndex,
    diag: Vec<f64>,
    site_actions: Vec<SiteAction>,
    pair_actions: Vec<PairAction>,
}

impl TermOperator {
    pub fn new(terms: &HamiltonianTerms) -> Result<Self> {
        let basis = if terms.constrained {
            if terms.local_dim != 2 {
                return Err(KzqError::Unsupported(
                    "blockade constraint requires a two-level chain".into(),
                ));
            }
            BasisIndex::blockade_constrained(terms.n_sites)?
        } else {
            BasisIndex::full(terms.n_sites, terms.local_dim)?
        };
        Self::with_basis(terms, basis)
    }

    pub fn with_basis(terms: &HamiltonianTerms, basis: BasisIndex) -> Result<Self> {
        let d = terms.local_dim;
        let dim = basis.dim();
        if dim > SPARSE_DIM_CAP {
            return Err(KzqError::SizeCap {
                dim,
                cap: SPARSE_DIM_CAP,
            });
        }

        let mut site_actions = Vec::new();
        for t in &terms.site_terms {
            let mut by_in = vec![Vec::new(); d];
            for out in 0..d {
                for inp in 0..d {
                    if out == inp {
                        continue;
                    }
                    let v = t.op[[out, inp]];
                    if v != C64::new(0.0, 0.0) {
                        by_in[inp].push((out, v));
                    }
                }
            }
            if by_in.iter().any(|e| !e.is_empty()) {
                site_actions.push(SiteAction { site: t.site, by_in });
            }
        }
        let mut pair_actions = Vec::new();
        for t in &terms.pair_terms {
            let mut by_in = vec![Vec::new(); d * d];
            for row in 0..d * d {
                for col in 0..d * d {
                    if row == col {
                        continue;
                    }
                    let v = t.op[[row, col]];
                    if v != C64::new(0.0, 0.0) {
                        by_in[col].push((row / d, row % d, v));
                    }
                }
            }
            if by_in.iter().any(|e| !e.is_empty()) {
                pair_actions.push(PairAction {
                    i: t.i,
                    j: t.j,
                    by_in,
                });
            }
        }

        // Diagonal accumulation over all terms.
        let mut diag = vec![0.0; dim];
        for (idx, dg) in diag.iter_mut().enumerate() {
            let code = basis.code(idx);
            let mut e = 0.0;
            for t in &terms.site_terms {
                let s = basis.digit(code, t.site);
                e += t.op[[s, s]].re;
            }
            for t in &terms.pair_terms {
                let a = basis.digit(code, t.i);
                let b = basis.digit(code, t.j);
                e += t.op[[a * d + b, a * d + b]].re;
            }
            *dg = e;
        }

        Ok(Self {
            basis,
            diag,
            site_actions,
            pair_actions,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// y = H v.
    pub fn apply(&self, v: &[C64], y: &mut [C64]) {
        let basis = &self.basis;
        let d = basis.local_dim;
        for (yi, (&vi, &di)) in y.iter_mut().zip(v.iter().zip(&self.diag)) {
            *yi = vi * di;
        }
        for action in &self.site_actions {
            for (idx, &vi) in v.iter().enumerate() {
                if vi == C64::new(0.0, 0.0) {
                    continue;
                }
                let code = basis.code(idx);
                let s = basis.digit(code, action.site);
                for &(out, val) in &action.by_in[s] {
                    let target = basis.with_digit(code, action.site, out);
                    if let Some(t) = basis.index_of(target) {
                        y[t] += val * vi;
                    }
                }
            }
        }
        for action in &self.pair_actions {
            for (idx, &vi) in v.iter().enumerate() {
                if vi == C64::new(0.0, 0.0) {
                    continue;
                }
                let code = basis.code(idx);
                let a = basis.digit(code, action.i);
                let b = basis.digit(code, action.j);
                for &(aout, bout, val) in &action.by_in[a * d + b] {
                    let target =
                        basis.with_digit(basis.with_digit(code, action.i, aout), action.j, bout);
                    if let Some(t) = basis.index_of(target) {
                        y[t] += val * vi;
                    }
                }
            }
        }
    }

    /// ⟨v|H|v⟩ (assumes Hermitian terms).
    pub fn expectation(&self, v: &[C64]) -> f64 {
        let mut y = vec![C64::new(0.0, 0.0); v.len()];
        self.apply(v, &mut y);
        v.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Materialize the dense matrix (small dimensions only).
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let dim = self.dim();
        if dim > MATERIALIZE_CAP {
            return Err(KzqError::SizeCap {
                dim,
                cap: MATERIALIZE_CAP,
            });
        }
        let basis = &self.basis;
        let d = basis.local_dim;
        let mut h = Array2::<C64>::zeros((dim, dim));
        for idx in 0..dim {
            h[[idx, idx]] = C64::new(self.diag[idx], 0.0);
            let code = basis.code(idx);
            for action in &self.site_actions {
                let s = basis.digit(code, action.site);
                for &(out, val) in &action.by_in[s] {
                    let target = basis.with_digit(code, action.site, out);
                    if let Some(t) = basis.index_of(target) {
                        h[[t, idx]] += val;
                    }
                }
            }
            for action in &self.pair_actions {
                let a = basis.digit(code, action.i);
                let b = basis.digit(code, action.j);
                for &(aout, bout, val) in &action.by_in[a * d + b] {
                    let target =
                        basis.with_digit(basis.with_digit(code, action.i, aout), action.j, bout);
                    if let Some(t) = basis.index_of(target) {
                        h[[t, idx]] += val;
                    }
                }
            }
        }
        Ok(h)
    }
}

/// Eigenvalues of a Hermitian complex matrix, ascending.
pub fn dense_eigenvalues(h: &Array2<C64>) -> Vec<f64> {
    let (w, _) = h.eigh(UPLO::Lower).expect("hermitian eigendecomposition");
    w.to_vec()
}

/// The k lowest eigenpairs of the Hamiltonian, energies nondecreasing and
/// eigenvectors orthonormal.
pub fn exact_spectrum(terms: &HamiltonianTerms, k: usize) -> Result<Vec<(f64, DenseState)>> {
    if k < 1 {
        return Err(KzqError::Domain("eigenpair count must be at least 1".into()));
    }
    let op = TermOperator::new(terms)?;
    let dim = op.dim();
    if dim > SPARSE_DIM_CAP {
        return Err(KzqError::SizeCap {
            dim,
            cap: SPARSE_DIM_CAP,
        });
    }
    if k > dim {
        return Err(KzqError::Domain(format!(
            "requested {k} eigenpairs from a dimension-{dim} space"
        )));
    }
    if dim <= MATERIALIZE_CAP {
        let h = op.to_dense()?;
        let (w, v) = h
            .eigh(UPLO::Lower)
            .map_err(|e| KzqError::Linalg(format!("dense eigensolve failed: {e}")))?;
        Ok((0..k)
            .map(|i| {
                // The backend returns conjugated eigenvector columns for
                // complex Hermitian input; harmless for real-symmetric H.
                (
                    w[i],
                    DenseState::from_amplitudes(
                        v.column(i).iter().map(|z| z.conj()).collect(),
                    ),
                )
            })
            .collect())
    } else {
        let (vals, vecs) = lanczos_lowest(dim, k, |v, y| op.apply(v, y), 0x6b7a71, 1e-9, 600)?;
        Ok(vals
            .into_iter()
            .zip(vecs.into_iter().map(DenseState::from_amplitudes))
            .take(k)
            .collect())
    }
}

/// Lanczos with full reorthogonalization for the k lowest eigenpairs of a
/// Hermitian operator given as a matvec closure.
pub fn lanczos_lowest(
    dim: usize,
    k: usize,
    apply: impl Fn(&[C64], &mut [C64]),
    seed: u64,
    tol: f64,
    max_m: usize,
) -> Result<(Vec<f64>, Vec<Vec<C64>>)> {
    let max_m = max_m.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    let n0 = v0.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v0.iter_mut().for_each(|a| *a /= n0);

    let mut vs: Vec<Vec<C64>> = vec![v0];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![C64::new(0.0, 0.0); dim];

    let mut m = (4 * k).max(40).min(max_m);
    loop {
        while alphas.len() < m {
            let j = alphas.len();
            apply(&vs[j], &mut w);
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
            // Full reorthogonalization (twice for stability).
            for _ in 0..2 {
                for vprev in &vs {
                    let ovl: C64 = vprev.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                    for (wi, pi) in w.iter_mut().zip(vprev) {
                        *wi -= pi * ovl;
                    }
                }
            }
            alphas.push(alpha);
            let beta = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if beta < 1e-13 || vs.len() == dim {
                betas.push(0.0);
                break;
            }
            betas.push(beta);
            let next: Vec<C64> = w.iter().map(|a| a / beta).collect();
            vs.push(next);
        }

        let steps = alphas.len();
        let mut t = Array2::<f64>::zeros((steps, steps));
        for i in 0..steps {
            t[[i, i]] = alphas[i];
            if i + 1 < steps && betas[i] > 0.0 {
                t[[i, i + 1]] = betas[i];
                t[[i + 1, i]] = betas[i];
            }
        }
        let (theta, s) = t
            .eigh(UPLO::Lower)
            .map_err(|e| KzqError::Linalg(format!("tridiagonal eigensolve failed: {e}")))?;
        let beta_last = if betas[steps - 1] > 0.0 && steps < dim {
            betas[steps - 1]
        } else {
            0.0
        };
        let scale = theta.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        let converged = (0..k.min(steps))
            .all(|i| beta_last * s[[steps - 1, i]].abs() <= tol * scale);
        let exhausted = beta_last == 0.0 || steps >= max_m;
        if converged || exhausted {
            if !converged {
                let worst = (0..k.min(steps))
                    .map(|i| beta_last * s[[steps - 1, i]].abs())
                    .fold(0.0f64, f64::max);
                if worst > tol * scale * 100.0 {
                    return Err(KzqError::Convergence(format!(
                        "Lanczos residual {worst:.3e} after {steps} iterations (tol {tol:.1e})"
                    )));
                }
            }
            let mut vals = Vec::with_capacity(k);
            let mut vecs = Vec::with_capacity(k);
            for i in 0..k.min(steps) {
                vals.push(theta[i]);
                let mut vec = vec![C64::new(0.0, 0.0); dim];
                for (j, vj) in vs.iter().enumerate().take(steps) {
                    let c = s[[j, i]];
                    for (out, inp) in vec.iter_mut().zip(vj) {
                        *out += inp * c;
                    }
                }
                vecs.push(vec);
            }
            return Ok((vals, vecs));
        }
        m = (2 * m).min(max_m);
    }
}

/// Draws i.i.d. projective measurement outcomes from |amplitude|².
pub fn sample_state(
    state: &DenseState,
    basis: &BasisIndex,
    shots: usize,
    seed: u64,
) -> Result<ShotEnsemble> {
    if shots < 1 {
        return Err(KzqError::Domain("shot count must be at least 1".into()));
    }
    let mut cum = Vec::with_capacity(state.dim());
    let mut acc = 0.0;
    for a in &state.amplitudes {
        acc += a.norm_sqr();
        cum.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Err(KzqError::Domain("cannot sample from a zero state".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shots);
    for _ in 0..shots {
        let u: f64 = rng.gen::<f64>() * total;
        let idx = cum.partition_point(|&c| c <= u).min(state.dim() - 1);
        out.push(basis.digits(basis.code(idx)));
    }
    ShotEnsemble::new(basis.n_sites, out, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rydberg_terms, truncated_uv_terms, LatticeSpec};
    use approx::assert_relative_eq;

    #[test]
    fn single_atom_spectrum_analytic() {
        let lat = LatticeSpec::new(2, 1.69, 1.0).unwrap();
        // Two atoms far enough apart that only analytics at V ~ 23 matter;
        // use a dedicated single-site check through a 2-site chain with V=0
        // via huge separation is impossible, so check N=1 analytics with a
        // direct 2x2 dense build instead.
        let omega = 1.3;
        let delta = 0.7;
        let mut terms = rydberg_terms(&lat, delta, omega, 1).unwrap();
        terms.pair_terms.clear();
        terms.site_terms.truncate(1);
        terms.n_sites = 1;
        let spec = exact_spectrum(&terms, 2).unwrap();
        let disc = (delta * delta + omega * omega).sqrt();
        assert_relative_eq!(spec[0].0, (-delta - disc) / 2.0, max_relative = 1e-12);
        assert_relative_eq!(spec[1].0, (-delta + disc) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn two_free_spins_spectrum() {
        let lat = LatticeSpec::new(2, 1.0, 1.0).unwrap();
        let omega = 0.9;
        let mut terms = rydberg_terms(&lat, 0.0, omega, 1).unwrap();
        terms.pair_terms.clear(); // V = 0
        let spec = exact_spectrum(&terms, 4).unwrap();
        let evs: Vec<f64> = spec.iter().map(|p| p.0).collect();
        assert_relative_eq!(evs[0], -omega, max_relative = 1e-12);
        assert!(evs[1].abs() < 1e-12 && evs[2].abs() < 1e-12);
        assert_relative_eq!(evs[3], omega, max_relative = 1e-12);
    }

    #[test]
    fn constrained_two_atoms_pxp_spectrum() {
        let lat = LatticeSpec::new(2, 1.0, 1.0).unwrap();
        let omega = 1.7;
        let terms = truncated_uv_terms(&lat, 0.0, omega, 0.0).unwrap();
        let spec = exact_spectrum(&terms, 3).unwrap();
        let evs: Vec<f64> = spec.iter().map(|p| p.0).collect();
        let x = omega / 2.0f64.sqrt();
        assert_relative_eq!(evs[0], -x, max_relative = 1e-12);
        assert!(evs[1].abs() < 1e-12);
        assert_relative_eq!(evs[2], x, max_relative = 1e-12);
    }

    #[test]
    fn lanczos_matches_dense_on_random_chain() {
        let lat = LatticeSpec::new(8, 1.5, 1.0).unwrap();
        let terms = rydberg_terms(&lat, 0.8, 1.1, 7).unwrap();
        let op = TermOperator::new(&terms).unwrap();
        let dense = op.to_dense().unwrap();
        let evs = dense_eigenvalues(&dense);
        let (vals, vecs) =
            lanczos_lowest(op.dim(), 3, |v, y| op.apply(v, y), 42, 1e-10, 400).unwrap();
        for i in 0..3 {
            assert_relative_eq!(vals[i], evs[i], epsilon = 1e-8);
        }
        // Orthonormality of Ritz vectors.
        for a in 0..3 {
            for b in 0..3 {
                let ovl: C64 = vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x.conj() * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ovl.norm() - expect).abs() < 1e-7, "({a},{b}) -> {ovl}");
            }
        }
    }

    #[test]
    fn sampling_deterministic_and_unbiased() {
        let basis = BasisIndex::full(1, 2).unwrap();
        let amp = 1.0 / 2.0f64.sqrt();
        let st = DenseState::from_amplitudes(vec![C64::new(amp, 0.0), C64::new(0.0, amp)]);
        let e1 = sample_state(&st, &basis, 10_000, 5).unwrap();
        let e2 = sample_state(&st, &basis, 10_000, 5).unwrap();
        assert_eq!(e1, e2);
        let frac = e1.site_means()[0];
        assert!((frac - 0.5).abs() < 0.02, "frac = {frac}");
    }

    #[test]
    fn sampling_neel_superposition_two_outcomes() {
        let basis = BasisIndex::full(4, 2).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 16];
        amps[0b1010] = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        amps[0b0101] = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let st = DenseState::from_amplitudes(amps);
        let ens = sample_state(&st, &basis, 500, 11).unwrap();
        for shot in &ens.shots {
            assert!(shot == &vec![1, 0, 1, 0] || shot == &vec![0, 1, 0, 1]);
        }
    }

    #[test]
    fn sampling_product_state_is_deterministic() {
        let basis = BasisIndex::full(3, 2).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 8];
        amps[0b101] = C64::new(1.0, 0.0);
        let st = DenseState::from_amplitudes(amps);
        let ens = sample_state(&st, &basis, 50, 3).unwrap();
        assert!(ens.shots.iter().all(|s| s == &vec![1, 0, 1]));
    }

    #[test]
    fn correlation_map_of_neel_superposition() {
        let basis = BasisIndex::full(4, 2).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 16];
        amps[0b1010] = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        amps[0b0101] = C64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let st = DenseState::from_amplitudes(amps);
        let g = st.correlation_map(&basis);
        for i in 0..4 {
            for j in 0..4 {
                let expect = 0.25 * if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                assert_relative_eq!(g[[i, j]], expect, epsilon = 1e-12);
            }
        }
    }
}
