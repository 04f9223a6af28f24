//! Small dense-linear-algebra helpers shared across backends.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Identity matrix of dimension `d`.
pub fn eye(d: usize) -> Array2<C64> {
    Array2::eye(d)
}

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Max absolute entry of the difference of two complex matrices.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
