//! Matrix product states: canonical forms, observables, sampling, and a
//! versioned binary checkpoint format.
//!
//! Site tensors are stored as `(left_bond, physical, right_bond)` arrays;
//! the outer bonds of the chain have dimension 1.

use super::linalg::{lq_thin, qr_thin, split_truncated, KeepSide};
use crate::error::{KzqError, Result};
use crate::shots::ShotEnsemble;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};

const CHECKPOINT_MAGIC: &[u8; 8] = b"KZQMPS1\n";

#[derive(Debug, Clone)]
pub struct Mps {
    pub tensors: Vec<Array3<C64>>,
    pub local_dim: usize,
}

impl Mps {
    /// Product state with the given digit on each site.
    pub fn product_state(digits: &[u8], local_dim: usize) -> Result<Self> {
        if digits.is_empty() {
            return Err(KzqError::Domain("empty chain".into()));
        }
        if digits.iter().any(|&s| s as usize >= local_dim) {
            return Err(KzqError::Domain(format!(
                "digit out of range for local dimension {local_dim}"
            )));
        }
        let tensors = digits
            .iter()
            .map(|&s| {
                let mut t = Array3::zeros((1, local_dim, 1));
                t[[0, s as usize, 0]] = C64::new(1.0, 0.0);
                t
            })
            .collect();
        Ok(Self { tensors, local_dim })
    }

    pub fn all_ground(n_sites: usize, local_dim: usize) -> Result<Self> {
        Self::product_state(&vec![0; n_sites], local_dim)
    }

    /// Exact MPS from a dense amplitude vector (site 0 most significant),
    /// truncated to `d_max` / `cutoff`.
    pub fn from_dense(
        amplitudes: &[C64],
        n_sites: usize,
        local_dim: usize,
        d_max: usize,
        cutoff: f64,
    ) -> Result<Self> {
        if amplitudes.len() != local_dim.pow(n_sites as u32) {
            return Err(KzqError::Domain(format!(
                "amplitude count {} does not match {local_dim}^{n_sites}",
                amplitudes.len()
            )));
        }
        let mut tensors = Vec::with_capacity(n_sites);
        let mut rest = Array2::from_shape_vec((1, amplitudes.len()), amplitudes.to_vec())
            .expect("shape");
        let mut dl = 1usize;
        for site in 0..n_sites {
            let remaining = local_dim.pow((n_sites - 1 - site) as u32);
            let m = rest
                .into_shape((dl * local_dim, remaining))
                .expect("reshape");
            if site == n_sites - 1 {
                let t = m
                    .into_shape((dl, local_dim, 1))
                    .expect("reshape")
                    .to_owned();
                tensors.push(t);
                break;
            }
            let split = split_truncated(&m, d_max, cutoff, KeepSide::Left)?;
            let chi = split.s.len();
            tensors.push(
                split
                    .iso
                    .into_shape((dl, local_dim, chi))
                    .expect("reshape")
                    .to_owned(),
            );
            rest = split.carry;
            dl = chi;
        }
        Ok(Self { tensors, local_dim })
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    /// Interior bond dimensions (length N−1).
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.n_sites() - 1]
            .iter()
            .map(|t| t.dim().2)
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// ⟨self|other⟩ (self is the bra).
    pub fn overlap(&self, other: &Mps) -> Result<C64> {
        if self.n_sites() != other.n_sites() || self.local_dim != other.local_dim {
            return Err(KzqError::Domain("overlap of mismatched chains".into()));
        }
        let mut e = Array2::<C64>::eye(1);
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            e = transfer_left(&e, a, b, None);
        }
        Ok(e[[0, 0]])
    }

    pub fn norm(&self) -> f64 {
        self.overlap(self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    pub fn scale(&mut self, factor: f64) {
        let f = C64::new(factor, 0.0);
        self.tensors[0].mapv_inplace(|z| z * f);
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n);
        }
    }

    /// Sweep right-to-left with LQ so every tensor except site 0 is
    /// right-normalized; site 0 carries the norm and phase.
    pub fn canonicalize_right(&mut self) -> Result<()> {
        for site in (1..self.n_sites()).rev() {
            let t = self.tensors[site].view();
            let (dl, d, dr) = t.dim();
            let m = t.into_shape((dl, d * dr)).expect("reshape").to_owned();
            let (l, q) = lq_thin(&m)?;
            let chi = q.nrows();
            self.tensors[site] = q.into_shape((chi, d, dr)).expect("reshape").to_owned();
            let prev = self.tensors[site - 1].view();
            let (pl, pd, pr) = prev.dim();
            let pm = prev.into_shape((pl * pd, pr)).expect("reshape").to_owned();
            let merged = pm.dot(&l);
            self.tensors[site - 1] = merged
                .into_shape((pl, pd, chi))
                .expect("reshape")
                .to_owned();
        }
        Ok(())
    }

    /// Sweep left-to-right with QR so every tensor except the last is
    /// left-normalized.
    pub fn canonicalize_left(&mut self) -> Result<()> {
        for site in 0..self.n_sites() - 1 {
            let t = self.tensors[site].view();
            let (dl, d, dr) = t.dim();
            let m = t.into_shape((dl * d, dr)).expect("reshape").to_owned();
            let (q, r) = qr_thin(&m)?;
            let chi = q.ncols();
            self.tensors[site] = q.into_shape((dl, d, chi)).expect("reshape").to_owned();
            let next = self.tensors[site + 1].view();
            let (nl, nd, nr) = next.dim();
            let nm = next.into_shape((nl, nd * nr)).expect("reshape").to_owned();
            let merged = r.dot(&nm);
            self.tensors[site + 1] = merged
                .into_shape((chi, nd, nr))
                .expect("reshape")
                .to_owned();
        }
        Ok(())
    }

    /// Left environments; `envs[i]` contracts sites `< i` (so `envs[0]` is
    /// the trivial 1×1 identity).
    fn left_envs(&self) -> Vec<Array2<C64>> {
        let mut envs = Vec::with_capacity(self.n_sites() + 1);
        envs.push(Array2::eye(1));
        for a in &self.tensors {
            let last = envs.last().unwrap();
            envs.push(transfer_left(last, a, a, None));
        }
        envs
    }

    /// Right environments; `envs[i]` contracts sites `≥ i`.
    fn right_envs(&self) -> Vec<Array2<C64>> {
        let n = self.n_sites();
        let mut envs = vec![Array2::eye(1); n + 1];
        for site in (0..n).rev() {
            envs[site] = transfer_right(&envs[site + 1], &self.tensors[site], &self.tensors[site]);
        }
        envs
    }

    /// ⟨op_i⟩ for a single-site operator applied on every site in turn.
    pub fn site_expectations(&self, op: &Array2<C64>) -> Vec<f64> {
        let left = self.left_envs();
        let right = self.right_envs();
        let norm2 = right[0][[0, 0]].re;
        (0..self.n_sites())
            .map(|i| {
                let e = transfer_left(&left[i], &self.tensors[i], &self.tensors[i], Some(op));
                close(&e, &right[i + 1]).re / norm2
            })
            .collect()
    }

    /// Mean Rydberg occupation per site (two-level chains).
    pub fn occupations(&self) -> Vec<f64> {
        self.site_expectations(&crate::model::number_op())
    }

    /// Connected correlation map G(i,j) = ⟨n_i n_j⟩ − ⟨n_i⟩⟨n_j⟩ for a
    /// diagonal single-site operator `op`.
    pub fn correlation_map(&self, op: &Array2<C64>) -> Array2<f64> {
        let n = self.n_sites();
        let left = self.left_envs();
        let right = self.right_envs();
        let norm2 = right[0][[0, 0]].re;
        let means: Vec<f64> = (0..n)
            .map(|i| {
                let e = transfer_left(&left[i], &self.tensors[i], &self.tensors[i], Some(op));
                close(&e, &right[i + 1]).re / norm2
            })
            .collect();
        let mut g = Array2::<f64>::zeros((n, n));
        // Two-point functions ⟨op_i op_j⟩ with one O(D³) sweep per row.
        let op2 = op.dot(op);
        for i in 0..n {
            let ei = transfer_left(&left[i], &self.tensors[i], &self.tensors[i], Some(&op2));
            g[[i, i]] = close(&ei, &right[i + 1]).re / norm2 - means[i] * means[i];
            let mut e = transfer_left(&left[i], &self.tensors[i], &self.tensors[i], Some(op));
            for j in i + 1..n {
                let ej = transfer_left(&e, &self.tensors[j], &self.tensors[j], Some(op));
                let v = close(&ej, &right[j + 1]).re / norm2 - means[i] * means[j];
                g[[i, j]] = v;
                g[[j, i]] = v;
                if j + 1 < n {
                    e = transfer_left(&e, &self.tensors[j], &self.tensors[j], None);
                }
            }
        }
        g
    }

    /// Projective samples in the computational basis; deterministic in the
    /// seed. O(shots · N · D²).
    pub fn sample(&self, shots: usize, seed: u64) -> Result<ShotEnsemble> {
        if shots < 1 {
            return Err(KzqError::Domain("shot count must be at least 1".into()));
        }
        let mut canon = self.clone();
        canon.canonicalize_right()?;
        canon.normalize();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = canon.n_sites();
        let d = canon.local_dim;
        let mut out = Vec::with_capacity(shots);
        for _ in 0..shots {
            let mut shot = Vec::with_capacity(n);
            // Row vector over the current left bond.
            let mut v = Array1::<C64>::from_elem(1, C64::new(1.0, 0.0));
            for a in &canon.tensors {
                let mut branch: Vec<Array1<C64>> = Vec::with_capacity(d);
                let mut weights = Vec::with_capacity(d);
                for s in 0..d {
                    let slab = a.index_axis(Axis(1), s);
                    let w = v.dot(&slab);
                    weights.push(w.iter().map(|z| z.norm_sqr()).sum::<f64>());
                    branch.push(w);
                }
                let total: f64 = weights.iter().sum();
                let u = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = d - 1;
                for (s, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = s;
                        break;
                    }
                }
                shot.push(pick as u8);
                let w = weights[pick].sqrt();
                v = branch.swap_remove(pick);
                if w > 0.0 {
                    v.mapv_inplace(|z| z / w);
                }
            }
            out.push(shot);
        }
        ShotEnsemble::new(n, out, seed)
    }

    /// Dense amplitude vector (small chains; test oracle).
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let d = self.local_dim;
        let dim_f = (d as f64).powi(self.n_sites() as i32);
        if dim_f > (1u64 << 24) as f64 {
            return Err(KzqError::SizeCap {
                dim: dim_f as usize,
                cap: 1 << 24,
            });
        }
        let mut acc = Array2::<C64>::eye(1); // (configurations, bond)
        for a in &self.tensors {
            let (dl, dd, dr) = a.dim();
            let m = a.view().into_shape((dl, dd * dr)).expect("reshape").to_owned();
            let merged = acc.dot(&m); // (configs, d·dr)
            let rows = merged.nrows() * dd;
            acc = merged.into_shape((rows, dr)).expect("reshape").to_owned();
        }
        Ok(acc.into_raw_vec())
    }

    /// Versioned binary checkpoint.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.n_sites() as u64).to_le_bytes())?;
        w.write_all(&(self.local_dim as u64).to_le_bytes())?;
        for t in &self.tensors {
            let (dl, d, dr) = t.dim();
            for v in [dl, d, dr] {
                w.write_all(&(v as u64).to_le_bytes())?;
            }
            for z in t.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(KzqError::Parse {
                line: 0,
                msg: "not an MPS checkpoint (bad magic)".into(),
            });
        }
        let n_sites = read_u64(&mut r)? as usize;
        let local_dim = read_u64(&mut r)? as usize;
        if n_sites == 0 || local_dim < 2 {
            return Err(KzqError::Parse {
                line: 0,
                msg: format!("invalid checkpoint header: {n_sites} sites, d = {local_dim}"),
            });
        }
        let mut tensors = Vec::with_capacity(n_sites);
        for _ in 0..n_sites {
            let dl = read_u64(&mut r)? as usize;
            let d = read_u64(&mut r)? as usize;
            let dr = read_u64(&mut r)? as usize;
            if d != local_dim {
                return Err(KzqError::Parse {
                    line: 0,
                    msg: "tensor physical dimension mismatch".into(),
                });
            }
            let mut data = Vec::with_capacity(dl * d * dr);
            for _ in 0..dl * d * dr {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(C64::new(re, im));
            }
            tensors.push(
                Array3::from_shape_vec((dl, d, dr), data).map_err(|_| KzqError::Parse {
                    line: 0,
                    msg: "truncated tensor data".into(),
                })?,
            );
        }
        Ok(Self { tensors, local_dim })
    }
}

fn read_u64(r: &mut impl BufRead) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl BufRead) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// e' = Σ_{sb,sk} op[sb,sk] · bra_sb† · e · ket_sk (identity op when `None`).
pub(crate) fn transfer_left(
    e: &Array2<C64>,
    bra: &Array3<C64>,
    ket: &Array3<C64>,
    op: Option<&Array2<C64>>,
) -> Array2<C64> {
    let d = bra.dim().1;
    let mut out = Array2::<C64>::zeros((bra.dim().2, ket.dim().2));
    for sb in 0..d {
        let bh = bra.index_axis(Axis(1), sb).mapv(|z| z.conj());
        for sk in 0..d {
            let w = match op {
                Some(o) => o[[sb, sk]],
                None if sb == sk => C64::new(1.0, 0.0),
                None => continue,
            };
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            let kk = ket.index_axis(Axis(1), sk);
            let tmp = e.dot(&kk);
            out = out + bh.t().dot(&tmp).mapv(|z| z * w);
        }
    }
    out
}

/// Mirror of [`transfer_left`] contracting from the right (identity op).
pub(crate) fn transfer_right(
    e: &Array2<C64>,
    bra: &Array3<C64>,
    ket: &Array3<C64>,
) -> Array2<C64> {
    let d = bra.dim().1;
    let mut out = Array2::<C64>::zeros((bra.dim().0, ket.dim().0));
    for s in 0..d {
        let bh = bra.index_axis(Axis(1), s).mapv(|z| z.conj());
        let kk = ket.index_axis(Axis(1), s);
        out = out + bh.dot(&e.dot(&kk.t()));
    }
    out
}

/// Contract a left environment against a right environment to a scalar.
pub(crate) fn close(left: &Array2<C64>, right: &Array2<C64>) -> C64 {
    left.iter()
        .zip(right.iter())
        .map(|(a, b)| a * b)
        .sum()
}
