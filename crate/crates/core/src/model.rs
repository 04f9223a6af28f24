//! Hamiltonian definitions for the Rydberg chain, its blockade-constrained
//! truncation, and the three-state chiral clock model, together with the
//! Kibble-Zurek critical-exponent arithmetic.
//!
//! All energies are angular frequencies in rad/µs and all times are in µs.
//! Interactions are parametrized by the dimensionless blockade ratio `R_B/a`
//! and the Rabi scale `Ω`, with `V(R_B) ≡ Ω`, so that
//! `V_ij = Ω (R_B/a)^6 / |i-j|^6`.

use crate::error::{KzqError, Result};
use crate::util::{c, eye, kron};
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Chain geometry and interaction strength in dimensionless form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n_sites: usize,
    /// Blockade ratio R_B/a.
    pub rb_over_a: f64,
    /// Rabi scale Ω in rad/µs; defines the interaction unit via V(R_B) = Ω.
    pub omega_scale: f64,
}

impl LatticeSpec {
    pub fn new(n_sites: usize, rb_over_a: f64, omega_scale: f64) -> Result<Self> {
        if n_sites < 2 {
            return Err(KzqError::Domain(format!(
                "n_sites must be at least 2, got {n_sites}"
            )));
        }
        if !(rb_over_a > 0.0) {
            return Err(KzqError::Domain(format!(
                "rb_over_a must be positive, got {rb_over_a}"
            )));
        }
        if !(omega_scale > 0.0) {
            return Err(KzqError::Domain(format!(
                "omega_scale must be positive, got {omega_scale}"
            )));
        }
        Ok(Self {
            n_sites,
            rb_over_a,
            omega_scale,
        })
    }
}

/// Van der Waals coupling between sites `i` and `j`:
/// `V_ij = Ω (R_B/a)^6 / |i-j|^6`.
pub fn vdw_coupling(lattice: &LatticeSpec, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(KzqError::InvalidPair {
            i,
            j,
            reason: "van der Waals coupling requires two distinct sites".into(),
        });
    }
    if i >= lattice.n_sites || j >= lattice.n_sites {
        return Err(KzqError::InvalidPair {
            i,
            j,
            reason: format!("site outside chain of length {}", lattice.n_sites),
        });
    }
    let r = i.abs_diff(j) as f64;
    Ok(lattice.omega_scale * (lattice.rb_over_a / r).powi(6))
}

/// Four-exponential approximation of the 1/r^6 tail, used by the DMRG matrix
/// product operator encoding of the long-range interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpSumApprox {
    pub coefficients: [f64; 4],
    pub bases: [f64; 4],
}

impl ExpSumApprox {
    /// The published coefficients for Σ c_i x_i^r ≈ 1/r^6.
    pub fn published() -> Self {
        Self {
            coefficients: [170.55, 1.29, 0.0252, 0.000279],
            bases: [0.00519, 0.0835, 0.279, 0.565],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (&ci, &xi) in self.coefficients.iter().zip(&self.bases) {
            if !(ci > 0.0) {
                return Err(KzqError::Domain(format!(
                    "exponential-sum coefficient must be positive, got {ci}"
                )));
            }
            if !(xi > 0.0 && xi < 1.0) {
                return Err(KzqError::Domain(format!(
                    "exponential-sum base must lie in (0, 1), got {xi}"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates the exponential-sum approximation at integer distance `r`.
pub fn exp_sum_approx(approx: &ExpSumApprox, r: i64) -> Result<f64> {
    if r < 1 {
        return Err(KzqError::Domain(format!(
            "exponential-sum distance must be at least 1, got {r}"
        )));
    }
    Ok(approx
        .coefficients
        .iter()
        .zip(&approx.bases)
        .map(|(&ci, &xi)| ci * xi.powi(r as i32))
        .sum())
}

/// A single-site Hamiltonian term: `op` is a `d × d` matrix acting on `site`.
#[derive(Debug, Clone)]
pub struct SiteTerm {
    pub site: usize,
    pub op: Array2<C64>,
}

/// A two-site Hamiltonian term: `op` is a `d² × d²` matrix acting on the
/// ordered pair `(i, j)` with `i < j` (row index `a·d + b` for local states
/// `a` on `i` and `b` on `j`).
#[derive(Debug, Clone)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub op: Array2<C64>,
}

impl PairTerm {
    pub fn span(&self) -> usize {
        self.j - self.i
    }
}

/// Backend-agnostic term list for a 1D chain Hamiltonian.
#[derive(Debug, Clone, Default)]
pub struct HamiltonianTerms {
    pub n_sites: usize,
    pub local_dim: usize,
    pub site_terms: Vec<SiteTerm>,
    pub pair_terms: Vec<PairTerm>,
    /// Hard blockade constraint n_i n_{i+1} = 0 (two-level chains only).
    pub constrained: bool,
    pub warnings: Vec<String>,
}

impl HamiltonianTerms {
    /// Hilbert-space dimension of the unconstrained product basis.
    pub fn full_dim(&self) -> usize {
        self.local_dim.pow(self.n_sites as u32)
    }
}

/// Projector onto the Rydberg state, `n = |r⟩⟨r|`, in the {|g⟩, |r⟩} basis.
pub fn number_op() -> Array2<C64> {
    let mut n = Array2::zeros((2, 2));
    n[[1, 1]] = c(1.0);
    n
}

/// Coupling operator `|g⟩⟨r| + |r⟩⟨g|` (σ_x in the {|g⟩, |r⟩} basis).
pub fn coupling_op() -> Array2<C64> {
    let mut x = Array2::zeros((2, 2));
    x[[0, 1]] = c(1.0);
    x[[1, 0]] = c(1.0);
    x
}

/// Full Rydberg chain: homogeneous coupling Ω/2, detuning −Δ n, and van der
/// Waals pair terms for all distances up to `cutoff` sites.
pub fn rydberg_terms(
    lattice: &LatticeSpec,
    delta: f64,
    omega: f64,
    cutoff: usize,
) -> Result<HamiltonianTerms> {
    if cutoff < 1 {
        return Err(KzqError::Domain("interaction cutoff must be at least 1".into()));
    }
    let n = lattice.n_sites;
    let mut warnings = Vec::new();
    let mut cutoff = cutoff;
    if cutoff >= n {
        warnings.push(format!(
            "interaction cutoff {cutoff} exceeds chain length {n}; clipped to {}",
            n - 1
        ));
        cutoff = n - 1;
    }
    let x = coupling_op();
    let nop = number_op();
    let nn = kron(&nop, &nop);
    let mut site_terms = Vec::with_capacity(2 * n);
    for i in 0..n {
        let op = x.mapv(|v| v * c(omega / 2.0)) - nop.mapv(|v| v * c(delta));
        site_terms.push(SiteTerm { site: i, op });
    }
    let mut pair_terms = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n.min(i + cutoff + 1) {
            let v = vdw_coupling(lattice, i, j)?;
            pair_terms.push(PairTerm {
                i,
                j,
                op: nn.mapv(|w| w * c(v)),
            });
        }
    }
    Ok(HamiltonianTerms {
        n_sites: n,
        local_dim: 2,
        site_terms,
        pair_terms,
        constrained: false,
        warnings,
    })
}

/// Rydberg chain with the pair couplings evaluated through the
/// exponential-sum fit instead of exact 1/r⁶, covering all distances. This
/// is the dense counterpart of the MPO encoding and serves as its oracle.
pub fn rydberg_exp_sum_terms(
    lattice: &LatticeSpec,
    delta: f64,
    omega: f64,
    approx: &ExpSumApprox,
) -> Result<HamiltonianTerms> {
    approx.validate()?;
    let n = lattice.n_sites;
    let v0 = lattice.omega_scale * lattice.rb_over_a.powi(6);
    let x = coupling_op();
    let nop = number_op();
    let nn = kron(&nop, &nop);
    let mut site_terms = Vec::with_capacity(n);
    for i in 0..n {
        let op = x.mapv(|v| v * c(omega / 2.0)) - nop.mapv(|v| v * c(delta));
        site_terms.push(SiteTerm { site: i, op });
    }
    let mut pair_terms = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = v0 * exp_sum_approx(approx, (j - i) as i64)?;
            pair_terms.push(PairTerm {
                i,
                j,
                op: nn.mapv(|w| w * c(v)),
            });
        }
    }
    Ok(HamiltonianTerms {
        n_sites: n,
        local_dim: 2,
        site_terms,
        pair_terms,
        constrained: false,
        warnings: Vec::new(),
    })
}

/// Blockade-truncated model: coupling and detuning plus a single
/// next-nearest-neighbor interaction `V₂ n_i n_{i+2}`, under the hard
/// constraint `n_i n_{i+1} = 0`.
pub fn truncated_uv_terms(
    lattice: &LatticeSpec,
    delta: f64,
    omega: f64,
    v2: f64,
) -> Result<HamiltonianTerms> {
    let n = lattice.n_sites;
    let x = coupling_op();
    let nop = number_op();
    let nn = kron(&nop, &nop);
    let mut site_terms = Vec::with_capacity(n);
    for i in 0..n {
        let op = x.mapv(|v| v * c(omega / 2.0)) - nop.mapv(|v| v * c(delta));
        site_terms.push(SiteTerm { site: i, op });
    }
    let mut pair_terms = Vec::new();
    if v2 != 0.0 {
        for i in 0..n.saturating_sub(2) {
            pair_terms.push(PairTerm {
                i,
                j: i + 2,
                op: nn.mapv(|w| w * c(v2)),
            });
        }
    }
    Ok(HamiltonianTerms {
        n_sites: n,
        local_dim: 2,
        site_terms,
        pair_terms,
        constrained: true,
        warnings: Vec::new(),
    })
}

/// Parameters of the three-state chiral clock model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CCMParams {
    /// Transverse-field strength (rad/µs).
    pub f: f64,
    /// Bond coupling strength (rad/µs).
    pub j: f64,
    /// On-site chiral phase φ (radians).
    pub phi: f64,
    /// Bond chiral phase θ (radians).
    pub theta: f64,
    /// Number of clock states; only 3 has a Hamiltonian builder. The 4-state
    /// models enter solely through the critical-exponent table.
    pub n_states: usize,
}

/// The clock operator τ = diag(1, ω, ω²) with ω = exp(2πi/3).
pub fn ccm_tau() -> Array2<C64> {
    let omega = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let mut t = Array2::zeros((3, 3));
    t[[0, 0]] = c(1.0);
    t[[1, 1]] = omega;
    t[[2, 2]] = omega * omega;
    t
}

/// The shift operator σ (cyclic permutation of the three clock states).
pub fn ccm_sigma() -> Array2<C64> {
    let mut s = Array2::zeros((3, 3));
    s[[0, 1]] = c(1.0);
    s[[1, 2]] = c(1.0);
    s[[2, 0]] = c(1.0);
    s
}

/// Chiral clock chain
/// `H = −f Σ_j (τ_j† e^{−iφ} + h.c.) − J Σ_j (σ_j† σ_{j+1} e^{−iθ} + h.c.)`.
pub fn ccm_terms(params: &CCMParams, n_sites: usize) -> Result<HamiltonianTerms> {
    if params.n_states != 3 {
        return Err(KzqError::Unsupported(format!(
            "only the 3-state chiral clock Hamiltonian is implemented (requested {} states); \
             4-state constants are available in the critical-exponent table",
            params.n_states
        )));
    }
    if n_sites < 2 {
        return Err(KzqError::Domain("chiral clock chain needs at least 2 sites".into()));
    }
    let tau = ccm_tau();
    let sigma = ccm_sigma();
    let tau_dag = tau.t().mapv(|v| v.conj());
    let sigma_dag = sigma.t().mapv(|v| v.conj());

    let ephi = C64::from_polar(1.0, -params.phi);
    let field = tau_dag.mapv(|v| v * ephi);
    let field = (&field + &field.t().mapv(|v| v.conj())).mapv(|v| v * c(-params.f));

    let etheta = C64::from_polar(1.0, -params.theta);
    let bond = kron(&sigma_dag, &sigma).mapv(|v| v * etheta);
    let bond = (&bond + &bond.t().mapv(|v| v.conj())).mapv(|v| v * c(-params.j));

    let site_terms = (0..n_sites)
        .map(|site| SiteTerm {
            site,
            op: field.clone(),
        })
        .collect();
    let pair_terms = (0..n_sites - 1)
        .map(|i| PairTerm {
            i,
            j: i + 1,
            op: bond.clone(),
        })
        .collect();
    Ok(HamiltonianTerms {
        n_sites,
        local_dim: 3,
        site_terms,
        pair_terms,
        constrained: false,
        warnings: Vec::new(),
    })
}

/// Energies of the two inequivalent clock domain walls,
/// `(2J sin(π/6 − θ), 2J sin(π/6 + θ))`.
pub fn ccm_wall_energies(j: f64, theta: f64) -> (f64, f64) {
    let sixth = std::f64::consts::PI / 6.0;
    (2.0 * j * (sixth - theta).sin(), 2.0 * j * (sixth + theta).sin())
}

/// A sweepable chain model: the full Rydberg Hamiltonian or its
/// blockade-constrained truncation. Both expose terms as a function of the
/// instantaneous (Ω, Δ), which is what the time-evolution backends need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChainModel {
    Rydberg { lattice: LatticeSpec, cutoff: usize },
    TruncatedUv { lattice: LatticeSpec, v2: f64 },
}

impl ChainModel {
    pub fn lattice(&self) -> &LatticeSpec {
        match self {
            ChainModel::Rydberg { lattice, .. } | ChainModel::TruncatedUv { lattice, .. } => lattice,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.lattice().n_sites
    }

    pub fn constrained(&self) -> bool {
        matches!(self, ChainModel::TruncatedUv { .. })
    }

    pub fn terms(&self, omega: f64, delta: f64) -> Result<HamiltonianTerms> {
        match self {
            ChainModel::Rydberg { lattice, cutoff } => {
                rydberg_terms(lattice, delta, omega, *cutoff)
            }
            ChainModel::TruncatedUv { lattice, v2 } => {
                truncated_uv_terms(lattice, delta, omega, *v2)
            }
        }
    }

    /// Diagonal interaction energy between sites `i < j`, zero beyond the
    /// model's range.
    pub fn pair_coupling(&self, i: usize, j: usize) -> f64 {
        let span = i.abs_diff(j);
        match self {
            ChainModel::Rydberg { lattice, cutoff } => {
                if span >= 1 && span <= *cutoff {
                    vdw_coupling(lattice, i, j).unwrap_or(0.0)
                } else {
                    0.0
                }
            }
            ChainModel::TruncatedUv { v2, .. } => {
                if span == 2 {
                    *v2
                } else {
                    0.0
                }
            }
        }
    }
}

/// Critical exponents and the derived Kibble-Zurek scaling exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalExponents {
    /// Dynamical exponent z.
    pub z: f64,
    /// Correlation-length exponent ν.
    pub nu: f64,
    /// Length scaling exponent μ = ν / (1 + νz).
    pub mu: f64,
    /// Control-parameter scaling exponent κ = −1 / (1 + zν).
    pub kappa: f64,
}

/// Computes μ and κ from the dynamical and correlation-length exponents.
pub fn kz_exponents(z: f64, nu: f64) -> Result<CriticalExponents> {
    if !(z > 0.0) || !(nu > 0.0) {
        return Err(KzqError::Domain(format!(
            "critical exponents must be positive, got z = {z}, nu = {nu}"
        )));
    }
    Ok(CriticalExponents {
        z,
        nu,
        mu: nu / (1.0 + nu * z),
        kappa: -1.0 / (1.0 + z * nu),
    })
}

/// Named universality classes with their (z, ν) inputs.
pub fn exponent_table() -> Vec<(&'static str, CriticalExponents)> {
    [
        ("ising", 1.0, 1.0),
        ("mean-field", 1.0, 0.5),
        ("potts-3", 1.0, 5.0 / 6.0),
        ("ccm-3", 1.33, 0.71),
        ("potts-4", 1.0, 2.0 / 3.0),
        // Four-state achiral clock: two decoupled Ising copies.
        ("achiral-clock-4", 1.0, 1.0),
    ]
    .iter()
    .map(|&(name, z, nu)| (name, kz_exponents(z, nu).expect("table entries are positive")))
    .collect()
}

/// Dense matrix of the full Hamiltonian in the unconstrained product basis.
/// Intended for small chains and tests.
pub fn dense_from_terms(terms: &HamiltonianTerms) -> Array2<C64> {
    let d = terms.local_dim;
    let n = terms.n_sites;
    let dim = terms.full_dim();
    let mut h = Array2::<C64>::zeros((dim, dim));
    for term in &terms.site_terms {
        let left = eye(d.pow(term.site as u32));
        let right = eye(d.pow((n - 1 - term.site) as u32));
        h = h + kron(&kron(&left, &term.op), &right);
    }
    for term in &terms.pair_terms {
        // Expand the pair operator to the sites in between with identities.
        let gap = term.j - term.i - 1;
        let dd = d * d;
        let mut expanded = Array2::<C64>::zeros((dd * d.pow(gap as u32), dd * d.pow(gap as u32)));
        let idg = eye(d.pow(gap as u32));
        for a_out in 0..d {
            for b_out in 0..d {
                for a_in in 0..d {
                    for b_in in 0..d {
                        let v = term.op[[a_out * d + b_out, a_in * d + b_in]];
                        if v == C64::new(0.0, 0.0) {
                            continue;
                        }
                        for g in 0..idg.nrows() {
                            let row = (a_out * idg.nrows() + g) * d + b_out;
                            let col = (a_in * idg.nrows() + g) * d + b_in;
                            expanded[[row, col]] += v;
                        }
                    }
                }
            }
        }
        let left = eye(d.pow(term.i as u32));
        let right = eye(d.pow((n - 1 - term.j) as u32));
        h = h + kron(&kron(&left, &expanded), &right);
    }
    h
}
