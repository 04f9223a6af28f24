//! Thin QR/LQ and truncated SVD used by the MPS routines.
//!
//! The SVD path switches to a Gram-matrix eigendecomposition for strongly
//! rectangular matrices, which is substantially faster than `?gesdd` at the
//! shapes produced by the sliding-window evolution.

use crate::error::{KzqError, Result};
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO, QR};
use num_complex::Complex64 as C64;

/// Result of an economy SVD, singular values descending. Only the factor
/// computed by an orthogonal eigendecomposition is guaranteed orthonormal;
/// the Gram-trick paths derive the other factor as `M·V/σ`, which degrades
/// for small singular values.
pub struct SvdEcon {
    pub u: Array2<C64>,
    pub s: Vec<f64>,
    pub vt: Array2<C64>,
    pub u_exact: bool,
    pub vt_exact: bool,
}

/// Which factor of a bipartition must come out exactly isometric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeepSide {
    Left,
    Right,
}

/// A truncated bipartition `M ≈ iso · carry` (KeepSide::Left) or
/// `M ≈ carry · iso` (KeepSide::Right), with `iso` isometric to machine
/// precision and `carry` carrying the weight.
pub struct TruncatedSplit {
    pub iso: Array2<C64>,
    pub carry: Array2<C64>,
    /// Kept singular values, descending.
    pub s: Vec<f64>,
    /// Relative discarded weight Σ_cut s² / Σ s².
    pub discarded: f64,
}

fn lin_err(op: &str, e: impl std::fmt::Display) -> KzqError {
    KzqError::Linalg(format!("{op} failed: {e}"))
}

/// Thin QR; Q has orthonormal columns, shape (m, min(m, n)).
pub fn qr_thin(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>)> {
    let a = m.as_standard_layout().to_owned();
    let (q, r) = a.qr().map_err(|e| lin_err("QR", e))?;
    Ok((q, r))
}

/// Forces row-major memory order so later `into_shape` calls reinterpret
/// indices logically rather than in stored order.
pub fn std_layout(a: Array2<C64>) -> Array2<C64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Thin LQ via QR of the conjugate transpose: `M = L · Q` with Q's rows
/// orthonormal, shape (min(m, n), n).
pub fn lq_thin(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>)> {
    let at = std_layout(m.t().mapv(|z| z.conj()));
    let (q, r) = qr_thin(&at)?;
    let l = std_layout(r.t().mapv(|z| z.conj()));
    let qh = std_layout(q.t().mapv(|z| z.conj()));
    Ok((l, qh))
}

/// Cutoff below which Gram-trick singular values are considered numerical
/// noise (relative to the largest singular value).
const GRAM_FLOOR: f64 = 1e-9;

fn gram_side_ok(small: usize, large: usize) -> bool {
    small <= 512 && large >= 2 * small
}

/// Economy SVD, singular values in descending order.
pub fn svd_econ(m: &Array2<C64>) -> Result<SvdEcon> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(KzqError::Linalg("SVD of an empty matrix".into()));
    }
    if gram_side_ok(rows, cols) {
        return svd_gram_left(m);
    }
    if gram_side_ok(cols, rows) {
        return svd_gram_right(m);
    }
    let a = m.as_standard_layout().to_owned();
    let (u, s, vt) = a.svddc(JobSvd::Some).map_err(|e| lin_err("SVD", e))?;
    Ok(SvdEcon {
        u: u.ok_or_else(|| lin_err("SVD", "missing U"))?,
        s: s.to_vec(),
        vt: vt.ok_or_else(|| lin_err("SVD", "missing Vt"))?,
        u_exact: true,
        vt_exact: true,
    })
}

/// Gram trick for wide matrices: eigendecompose M·Mᴴ (rows × rows).
fn svd_gram_left(m: &Array2<C64>) -> Result<SvdEcon> {
    let mh = m.t().mapv(|z| z.conj());
    let g = m.dot(&mh);
    let (w, v) = g.eigh(UPLO::Lower).map_err(|e| lin_err("Gram eigh", e))?;
    // eigh returns ascending; reverse to descending singular values. The
    // LAPACK backend hands a row-major Hermitian matrix to a column-major
    // routine, so the eigenvector columns come back conjugated.
    let k = w.len();
    let smax = w[k - 1].max(0.0).sqrt();
    let floor = smax * GRAM_FLOOR;
    let mut s = Vec::with_capacity(k);
    let mut u = Array2::<C64>::zeros((m.nrows(), k));
    for (col, src) in (0..k).rev().enumerate() {
        s.push(w[src].max(0.0).sqrt());
        u.column_mut(col).assign(&v.column(src).mapv(|z| z.conj()));
    }
    let uh = u.t().mapv(|z| z.conj());
    let mut vt = uh.dot(m);
    for (i, &si) in s.iter().enumerate() {
        let scale = if si > floor { 1.0 / si } else { 0.0 };
        vt.row_mut(i).mapv_inplace(|z| z * scale);
    }
    Ok(SvdEcon {
        u,
        s,
        vt,
        u_exact: true,
        vt_exact: false,
    })
}

/// Gram trick for tall matrices: eigendecompose Mᴴ·M (cols × cols).
fn svd_gram_right(m: &Array2<C64>) -> Result<SvdEcon> {
    let mh = m.t().mapv(|z| z.conj());
    let g = mh.dot(m);
    let (w, v) = g.eigh(UPLO::Lower).map_err(|e| lin_err("Gram eigh", e))?;
    let k = w.len();
    let smax = w[k - 1].max(0.0).sqrt();
    let floor = smax * GRAM_FLOOR;
    let mut s = Vec::with_capacity(k);
    let mut vt = Array2::<C64>::zeros((k, m.ncols()));
    for (row, src) in (0..k).rev().enumerate() {
        s.push(w[src].max(0.0).sqrt());
        // Row of Vt is the conjugate of the true eigenvector of MᴴM; the
        // backend already returns conjugated columns (see svd_gram_left),
        // so the raw column is used as-is.
        vt.row_mut(row).assign(&v.column(src));
    }
    let vtth = vt.t().mapv(|z| z.conj());
    let mut u = m.dot(&vtth);
    for (i, &si) in s.iter().enumerate() {
        let scale = if si > floor { 1.0 / si } else { 0.0 };
        u.column_mut(i).mapv_inplace(|z| z * scale);
    }
    Ok(SvdEcon {
        u,
        s,
        vt,
        u_exact: false,
        vt_exact: true,
    })
}

/// Truncated bipartition keeping at most `d_max` singular values and
/// discarding relative weight at most `cutoff` (always keeps at least one).
/// The factor on `side` is isometric to machine precision; the other factor
/// is the exact projection `isoᴴ·M` (resp. `M·isoᴴ`), so
/// `‖M − iso·carry‖² / ‖M‖² = discarded` holds by construction.
pub fn split_truncated(
    m: &Array2<C64>,
    d_max: usize,
    cutoff: f64,
    side: KeepSide,
) -> Result<TruncatedSplit> {
    let e = svd_econ(m)?;
    let s = &e.s;
    let total: f64 = s.iter().map(|x| x * x).sum();
    if !(total > 0.0) {
        return Err(KzqError::Linalg("SVD of a zero matrix".into()));
    }
    // Largest k within d_max whose tail weight exceeds the cutoff.
    let mut keep = s.len().min(d_max.max(1));
    let mut tail: f64 = s[keep..].iter().map(|x| x * x).sum();
    while keep > 1 {
        let last = s[keep - 1] * s[keep - 1];
        if (tail + last) / total > cutoff {
            break;
        }
        tail += last;
        keep -= 1;
    }
    let discarded = s[keep..].iter().map(|x| x * x).sum::<f64>() / total;
    let mh = |a: &Array2<C64>| std_layout(a.t().mapv(|z| z.conj()));
    let (iso, carry) = match side {
        KeepSide::Left => {
            let iso = if e.u_exact {
                e.u.slice(s![.., ..keep]).to_owned()
            } else {
                // U came from M·V/σ; re-orthonormalize via QR of M·V_k.
                // Column i of M·V_k has norm σ_i, so Q spans the kept
                // subspace with orthonormality restored.
                let vk = mh(&e.vt.slice(s![..keep, ..]).to_owned());
                let (q, _) = qr_thin(&m.dot(&vk))?;
                q
            };
            let carry = mh(&iso).dot(m);
            (iso, carry)
        }
        KeepSide::Right => {
            let iso = if e.vt_exact {
                e.vt.slice(s![..keep, ..]).to_owned()
            } else {
                let uk = e.u.slice(s![.., ..keep]).to_owned();
                let (q, _) = qr_thin(&mh(&mh(&uk).dot(m)))?;
                mh(&q)
            };
            let carry = m.dot(&mh(&iso));
            (iso, carry)
        }
    };
    Ok(TruncatedSplit {
        iso: std_layout(iso),
        carry: std_layout(carry),
        s: s[..keep].to_vec(),
        discarded,
    })
}
