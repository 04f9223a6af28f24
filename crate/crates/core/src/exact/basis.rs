//! Bitstring (and 3-state string) bases with an optional blockade filter.

use crate::error::{KzqError, Result};
use std::collections::HashMap;

/// Bijective mapping between product-basis strings and contiguous indices.
///
/// Codes are packed with site 0 as the most significant digit, matching the
/// Kronecker-product ordering used by the dense matrix builders.
#[derive(Debug, Clone)]
pub struct BasisIndex {
    pub n_sites: usize,
    pub local_dim: usize,
    pub constrained: bool,
    /// Digit place values: `pow[site] = local_dim^(n_sites-1-site)`.
    pow: Vec<u64>,
    states: Vec<u64>,
    /// Empty for the unconstrained case, where `index_of` is the identity.
    index: HashMap<u64, u32>,
}

impl BasisIndex {
    pub fn full(n_sites: usize, local_dim: usize) -> Result<Self> {
        let dim_bits = (local_dim as f64).log2() * n_sites as f64;
        if dim_bits > 31.0 {
            return Err(KzqError::SizeCap {
                dim: usize::MAX,
                cap: 1 << 31,
            });
        }
        let dim = local_dim.pow(n_sites as u32);
        let pow = Self::powers(n_sites, local_dim);
        Ok(Self {
            n_sites,
            local_dim,
            constrained: false,
            pow,
            states: (0..dim as u64).collect(),
            index: HashMap::new(),
        })
    }

    /// Two-level basis restricted to strings with no adjacent Rydberg
    /// excitations; the count is the Fibonacci number F(N+2).
    pub fn blockade_constrained(n_sites: usize) -> Result<Self> {
        if n_sites > 60 {
            return Err(KzqError::SizeCap {
                dim: usize::MAX,
                cap: 1 << 31,
            });
        }
        let pow = Self::powers(n_sites, 2);
        let mut states = Vec::new();
        // Enumerate by recursion on the leading site to keep codes sorted.
        let mut stack: Vec<(u64, usize, bool)> = vec![(0, 0, false)];
        while let Some((code, site, prev_r)) = stack.pop() {
            if site == n_sites {
                states.push(code);
                continue;
            }
            // Push the r-branch first so the g-branch is processed first
            // (stack order), producing ascending codes.
            if !prev_r {
                stack.push((code + pow[site], site + 1, true));
            }
            stack.push((code, site + 1, false));
        }
        states.sort_unstable();
        let index = states
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, i as u32))
            .collect();
        Ok(Self {
            n_sites,
            local_dim: 2,
            constrained: true,
            pow,
            states,
            index,
        })
    }

    fn powers(n_sites: usize, local_dim: usize) -> Vec<u64> {
        (0..n_sites)
            .map(|site| (local_dim as u64).pow((n_sites - 1 - site) as u32))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn code(&self, idx: usize) -> u64 {
        self.states[idx]
    }

    #[inline]
    pub fn index_of(&self, code: u64) -> Option<usize> {
        if self.constrained {
            self.index.get(&code).map(|&i| i as usize)
        } else {
            Some(code as usize)
        }
    }

    #[inline]
    pub fn digit(&self, code: u64, site: usize) -> usize {
        ((code / self.pow[site]) % self.local_dim as u64) as usize
    }

    /// Replace the digit at `site` (no constraint check).
    #[inline]
    pub fn with_digit(&self, code: u64, site: usize, digit: usize) -> u64 {
        let old = self.digit(code, site) as u64;
        code.wrapping_add((digit as u64).wrapping_sub(old).wrapping_mul(self.pow[site]))
    }

    /// Number of excited (nonzero) digits in `code`.
    pub fn excitation_count(&self, code: u64) -> usize {
        (0..self.n_sites).filter(|&s| self.digit(code, s) != 0).count()
    }

    /// Decode a basis code into per-site digits.
    pub fn digits(&self, code: u64) -> Vec<u8> {
        (0..self.n_sites).map(|s| self.digit(code, s) as u8).collect()
    }

    /// Index of the all-ground product state.
    pub fn ground_index(&self) -> usize {
        self.index_of(0).expect("all-ground state is always admissible")
    }
}
