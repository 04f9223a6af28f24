//! Matrix product operator for the long-range Rydberg Hamiltonian, with the
//! 1/r⁶ tail encoded through the exponential-sum approximation (bond
//! dimension 6: identity channel, four decay channels, completion channel).

use crate::error::{KzqError, Result};
use crate::model::{number_op, ExpSumApprox, LatticeSpec};
use ndarray::prelude::*;
use num_complex::Complex64 as C64;

use super::mps::Mps;

/// MPO site tensors `(w_left, s_out, s_in, w_right)`; outer MPO bonds have
/// dimension 1.
pub struct Mpo {
    pub tensors: Vec<Array4<C64>>,
    pub local_dim: usize,
}

/// Sparse view of one MPO tensor: `(wl, s_out, s_in, wr, coefficient)`.
pub(crate) type MpoEntries = Vec<(usize, usize, usize, usize, C64)>;

impl Mpo {
    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub(crate) fn entries(&self, site: usize) -> MpoEntries {
        let t = &self.tensors[site];
        let (wl, d, _, wr) = t.dim();
        let mut out = Vec::new();
        for a in 0..wl {
            for sb in 0..d {
                for sk in 0..d {
                    for b in 0..wr {
                        let v = t[[a, sb, sk, b]];
                        if v != C64::new(0.0, 0.0) {
                            out.push((a, sb, sk, b, v));
                        }
                    }
                }
            }
        }
        out
    }

    /// ⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩.
    pub fn expectation(&self, mps: &Mps) -> Result<f64> {
        if mps.n_sites() != self.n_sites() || mps.local_dim != self.local_dim {
            return Err(KzqError::Domain(
                "MPO and MPS dimensions do not match".into(),
            ));
        }
        let mut env = Array3::<C64>::zeros((1, 1, 1));
        env[[0, 0, 0]] = C64::new(1.0, 0.0);
        for site in 0..self.n_sites() {
            let entries = self.entries(site);
            env = mpo_transfer_left(
                &env,
                &entries,
                self.tensors[site].dim().3,
                &mps.tensors[site],
                &mps.tensors[site],
            );
        }
        let num = env[[0, 0, 0]].re;
        let n2 = mps.norm().powi(2);
        if n2 == 0.0 {
            return Err(KzqError::Domain("expectation on a zero state".into()));
        }
        Ok(num / n2)
    }
}

/// Environment update across one site:
/// `L'[br, wr, kr] = Σ c · bra_sb† · L[:, wl, :] · ket_sk`.
pub(crate) fn mpo_transfer_left(
    env: &Array3<C64>,
    entries: &MpoEntries,
    w_right: usize,
    bra: &Array3<C64>,
    ket: &Array3<C64>,
) -> Array3<C64> {
    let mut out = Array3::<C64>::zeros((bra.dim().2, w_right, ket.dim().2));
    for &(wl, sb, sk, wr, c) in entries {
        let bh = bra.index_axis(Axis(1), sb).mapv(|z| z.conj());
        let kk = ket.index_axis(Axis(1), sk);
        let l = env.index_axis(Axis(1), wl);
        let tmp = bh.t().dot(&l).dot(&kk).mapv(|z| z * c);
        let mut slot = out.index_axis_mut(Axis(1), wr);
        slot += &tmp;
    }
    out
}

/// Mirror update from the right:
/// `R'[bl, wl, kl] = Σ c · bra_sb* · R[:, wr, :] · ket_sk†`.
pub(crate) fn mpo_transfer_right(
    env: &Array3<C64>,
    entries: &MpoEntries,
    w_left: usize,
    bra: &Array3<C64>,
    ket: &Array3<C64>,
) -> Array3<C64> {
    let mut out = Array3::<C64>::zeros((bra.dim().0, w_left, ket.dim().0));
    for &(wl, sb, sk, wr, c) in entries {
        let bh = bra.index_axis(Axis(1), sb).mapv(|z| z.conj());
        let kk = ket.index_axis(Axis(1), sk);
        let r = env.index_axis(Axis(1), wr);
        let tmp = bh.dot(&r).dot(&kk.t()).mapv(|z| z * c);
        let mut slot = out.index_axis_mut(Axis(1), wl);
        slot += &tmp;
    }
    out
}

/// Rydberg chain MPO `H = Σ (Ω/2)σˣ_i − Δ n_i + Σ_{i<j} V(j−i) n_i n_j`
/// with `V(r) = Ω(R_b/a)⁶ Σ_k c_k x_k^r`.
pub fn rydberg_mpo(
    lattice: &LatticeSpec,
    delta: f64,
    omega: f64,
    approx: &ExpSumApprox,
) -> Result<Mpo> {
    approx.validate()?;
    let n = lattice.n_sites;
    if n < 2 {
        return Err(KzqError::Domain("MPO needs at least 2 sites".into()));
    }
    let v0 = lattice.omega_scale * lattice.rb_over_a.powi(6);
    let nop = number_op();
    let mut sx = Array2::<C64>::zeros((2, 2));
    sx[[0, 1]] = C64::new(1.0, 0.0);
    sx[[1, 0]] = C64::new(1.0, 0.0);
    let onsite = sx.mapv(|z| z * 0.5 * omega) - nop.mapv(|z| z * delta);

    // Channel layout: 0 = not started, 1..=4 = decay channels, 5 = done.
    let w = 6usize;
    let mut bulk = Array4::<C64>::zeros((w, 2, 2, w));
    let id = Array2::<C64>::eye(2);
    for s_out in 0..2 {
        for s_in in 0..2 {
            bulk[[0, s_out, s_in, 0]] = id[[s_out, s_in]];
            bulk[[w - 1, s_out, s_in, w - 1]] = id[[s_out, s_in]];
            bulk[[0, s_out, s_in, w - 1]] = onsite[[s_out, s_in]];
            for k in 0..4 {
                let xk = approx.bases[k];
                let ck = approx.coefficients[k];
                bulk[[0, s_out, s_in, 1 + k]] = nop[[s_out, s_in]] * xk;
                bulk[[1 + k, s_out, s_in, 1 + k]] = id[[s_out, s_in]] * xk;
                bulk[[1 + k, s_out, s_in, w - 1]] = nop[[s_out, s_in]] * (v0 * ck);
            }
        }
    }

    let mut tensors = Vec::with_capacity(n);
    tensors.push(
        bulk.slice(s![0..1, .., .., ..]).to_owned(), // (1, 2, 2, 6)
    );
    for _ in 1..n - 1 {
        tensors.push(bulk.clone());
    }
    tensors.push(bulk.slice(s![.., .., .., w - 1..w]).to_owned());
    Ok(Mpo {
        tensors,
        local_dim: 2,
    })
}
