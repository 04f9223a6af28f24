//! Statistical pipeline: correlation functions with jackknife errors,
//! correlation-length fits (modulus and density-wave), power-law scaling
//! fits, rate-window extraction, universal collapse, and domain statistics.
//!
//! Distances are in units of lattice sites throughout.

use crate::error::{KzqError, Result};
use crate::shots::ShotEnsemble;
use ndarray::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Maximum distance entering correlation-length fits.
const FIT_RANGE: f64 = 20.0;
/// Bracket for the golden-section ξ search, in sites.
const XI_MIN: f64 = 0.05;
const XI_MAX: f64 = 1.0e4;

/// Radially averaged connected correlation G(r) with jackknife errors.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationFunction {
    pub r: Vec<usize>,
    pub g: Vec<f64>,
    /// Leave-one-shot-out jackknife standard errors (zero when computed
    /// from a state rather than shots).
    pub sem: Vec<f64>,
    pub pair_counts: Vec<usize>,
    pub trim: usize,
    /// Set when the jackknife is degenerate (all shots identical).
    pub degenerate: bool,
}

impl CorrelationFunction {
    /// CSV with columns `r,G,sem,N_r`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,G,sem,N_r\n");
        for k in 0..self.r.len() {
            let _ = writeln!(
                out,
                "{},{:.12e},{:.12e},{}",
                self.r[k], self.g[k], self.sem[k], self.pair_counts[k]
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitMode {
    /// Fit |G(r)| to A·e^{−r/ξ}.
    Modulus,
    /// Fit G(r) to A·e^{−r/ξ}·Ĝ_N(r) for Z_N order, N ∈ {2, 3, 4}.
    DensityWave(u8),
}

/// Ideal Z_N density-wave correlation at integer distance.
pub fn ideal_correlation(order: u8, r: f64) -> Result<f64> {
    use std::f64::consts::PI;
    match order {
        2 => Ok((PI * r).cos()),
        3 => Ok((2.0 * PI * r / 3.0).cos()),
        4 => Ok((PI * r / 2.0).cos() + 0.5 * (PI * r).cos()),
        other => Err(KzqError::Domain(format!(
            "density-wave order must be 2, 3, or 4, got {other}"
        ))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityWaveFit {
    pub amplitude: f64,
    /// Correlation length, sites.
    pub xi: f64,
    pub mode: FitMode,
    /// Error-weighted mean squared residual of the fit.
    pub residual: f64,
    /// Set when ξ ran into the search bracket (e.g. infinite-range order);
    /// the reported ξ is then a bound, not an estimate.
    pub unreliable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub mu: f64,
    pub mu_err: f64,
    pub xi0: f64,
    /// Reference rate (geometric mean of the input rates).
    pub s0: f64,
    pub n_points: usize,
    /// Weighted mean squared residual in log space.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateWindow {
    /// Saturation rate; absent when the data are consistent with a pure
    /// power law.
    pub s_c: Option<f64>,
    pub s_min: f64,
    pub s_max: f64,
    /// Plateau ξ at saturation, when detected.
    pub plateau_xi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainStats {
    /// Counts of bulk excitation pairs at each spacing.
    pub f: BTreeMap<usize, usize>,
    /// p_N = N·f_N / Σ i·f_i.
    pub p: BTreeMap<usize, f64>,
    /// Per-shot positions (left site of the pair) where the spacing
    /// deviates from the dominant period.
    pub walls: Vec<Vec<usize>>,
    /// Set when no qualifying pairs were found in any shot.
    pub empty: bool,
}

/// Connected correlation map G(i, j) from a shot ensemble (full chain; the
/// bulk trim is applied by the radial average).
pub fn shot_correlation_map(ensemble: &ShotEnsemble) -> Array2<f64> {
    let n = ensemble.n_sites;
    let s = ensemble.len() as f64;
    let mut m1 = vec![0.0f64; n];
    let mut m2 = Array2::<f64>::zeros((n, n));
    for shot in &ensemble.shots {
        for i in 0..n {
            if shot[i] == 0 {
                continue;
            }
            m1[i] += 1.0;
            for j in 0..n {
                if shot[j] != 0 {
                    m2[[i, j]] += 1.0;
                }
            }
        }
    }
    let mut g = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            g[[i, j]] = m2[[i, j]] / s - (m1[i] / s) * (m1[j] / s);
        }
    }
    g
}

fn radial_average(map: &Array2<f64>, trim: usize) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    let n = map.nrows();
    if n < 2 * trim + 4 {
        return Err(KzqError::Domain(format!(
            "bulk window too small: {n} sites with trim {trim}"
        )));
    }
    let (lo, hi) = (trim, n - trim);
    let max_r = hi - lo - 1;
    let mut sums = vec![0.0f64; max_r + 1];
    let mut counts = vec![0usize; max_r + 1];
    for i in lo..hi {
        for j in lo..hi {
            let r = i.abs_diff(j);
            sums[r] += map[[i, j]];
            counts[r] += 1;
        }
    }
    let rs: Vec<usize> = (0..=max_r).collect();
    let g: Vec<f64> = rs.iter().map(|&r| sums[r] / counts[r] as f64).collect();
    Ok((rs, g, counts))
}

/// Radially averaged G(r) from a state-exact correlation map; jackknife
/// errors are identically zero.
pub fn correlation_function_from_map(
    map: &Array2<f64>,
    trim: usize,
) -> Result<CorrelationFunction> {
    let (r, g, pair_counts) = radial_average(map, trim)?;
    let sem = vec![0.0; r.len()];
    Ok(CorrelationFunction {
        r,
        g,
        sem,
        pair_counts,
        trim,
        degenerate: false,
    })
}

/// G(r) per Eq. (2): diagonal average of the connected map over the bulk
/// window (default trim 8 sites per edge), with leave-one-shot-out
/// jackknife errors over the full map → G(r) pipeline.
pub fn correlation_function(ensemble: &ShotEnsemble, trim: usize) -> Result<CorrelationFunction> {
    let s = ensemble.len();
    if s < 2 {
        return Err(KzqError::Domain(
            "jackknife needs at least 2 shots".into(),
        ));
    }
    let full = shot_correlation_map(ensemble);
    let (r, g, pair_counts) = radial_average(&full, trim)?;

    // Leave-one-out via running totals: per-site and per-pair occupation
    // sums over all shots, with one shot subtracted at a time.
    let n = ensemble.n_sites;
    let mut t1 = vec![0.0f64; n];
    let mut t2 = Array2::<f64>::zeros((n, n));
    for shot in &ensemble.shots {
        for i in 0..n {
            if shot[i] == 0 {
                continue;
            }
            t1[i] += 1.0;
            for j in 0..n {
                if shot[j] != 0 {
                    t2[[i, j]] += 1.0;
                }
            }
        }
    }
    let sm1 = (s - 1) as f64;
    let mut jack: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut loo = Array2::<f64>::zeros((n, n));
    for shot in &ensemble.shots {
        for i in 0..n {
            let ni = (shot[i] != 0) as u8 as f64;
            let m1i = (t1[i] - ni) / sm1;
            for j in 0..n {
                let nj = (shot[j] != 0) as u8 as f64;
                let m2 = (t2[[i, j]] - ni * nj) / sm1;
                loo[[i, j]] = m2 - m1i * (t1[j] - nj) / sm1;
            }
        }
        let (_, gk, _) = radial_average(&loo, trim)?;
        jack.push(gk);
    }
    let degenerate = ensemble.shots.windows(2).all(|w| w[0] == w[1]);
    let mut sem = vec![0.0f64; r.len()];
    for k in 0..r.len() {
        let mean: f64 = jack.iter().map(|j| j[k]).sum::<f64>() / s as f64;
        let var: f64 = jack.iter().map(|j| (j[k] - mean).powi(2)).sum::<f64>();
        sem[k] = (sm1 / s as f64 * var).sqrt();
    }
    Ok(CorrelationFunction {
        r,
        g,
        sem,
        pair_counts,
        trim,
        degenerate,
    })
}

/// Weighted least-squares fit of G(r) to A·e^{−r/ξ} (times Ĝ_N in
/// density-wave mode, taking |G| in modulus mode) over 0 < r ≤ 20, with the
/// amplitude profiled out and ξ found by golden-section search.
pub fn fit_correlation_length(
    corr: &CorrelationFunction,
    mode: FitMode,
) -> Result<DensityWaveFit> {
    let mut rs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for k in 0..corr.r.len() {
        let r = corr.r[k] as f64;
        if !(r > 0.0 && r <= FIT_RANGE) {
            continue;
        }
        let (y, basis_sign_ok) = match mode {
            FitMode::Modulus => (corr.g[k].abs(), true),
            FitMode::DensityWave(_) => (corr.g[k], true),
        };
        if !basis_sign_ok {
            continue;
        }
        rs.push(r);
        ys.push(y);
        ws.push(if corr.sem[k] > 0.0 {
            1.0 / (corr.sem[k] * corr.sem[k])
        } else {
            1.0
        });
    }
    if rs.len() < 5 {
        return Err(KzqError::Fit(format!(
            "need at least 5 points with 0 < r <= {FIT_RANGE}, have {}",
            rs.len()
        )));
    }
    // If any point lacks an error bar, fall back to unweighted throughout
    // so mixed weights cannot skew the fit.
    if ws.iter().any(|&w| w == 1.0) {
        ws.iter_mut().for_each(|w| *w = 1.0);
    }
    let basis = |r: f64, xi: f64| -> Result<f64> {
        let e = (-r / xi).exp();
        Ok(match mode {
            FitMode::Modulus => e,
            FitMode::DensityWave(order) => e * ideal_correlation(order, r)?,
        })
    };
    // Profiled amplitude and weighted SSE at fixed ξ.
    let objective = |xi: f64| -> Result<(f64, f64)> {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&r, &y), &w) in rs.iter().zip(&ys).zip(&ws) {
            let b = basis(r, xi)?;
            num += w * y * b;
            den += w * b * b;
        }
        let a = if den > 0.0 { num / den } else { 0.0 };
        let mut sse = 0.0;
        for ((&r, &y), &w) in rs.iter().zip(&ys).zip(&ws) {
            let d = y - a * basis(r, xi)?;
            sse += w * d * d;
        }
        Ok((a, sse))
    };
    // Golden-section search on log ξ; the profiled objective is smooth and
    // near-unimodal, and ties break toward smaller ξ via the ≤ comparison.
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (XI_MIN.ln(), XI_MAX.ln());
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = objective(x1.exp())?.1;
    let mut f2 = objective(x2.exp())?.1;
    for _ in 0..200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1.exp())?.1;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2.exp())?.1;
        }
    }
    let xi = (0.5 * (lo + hi)).exp();
    let (amplitude, sse) = objective(xi)?;
    let wsum: f64 = ws.iter().sum();
    let unreliable = xi > 0.95 * XI_MAX || xi < XI_MIN * 1.05 || xi > FIT_RANGE * 2.0;
    Ok(DensityWaveFit {
        amplitude,
        xi,
        mode,
        residual: sse / wsum,
        unreliable,
    })
}

/// Weighted log-log regression of ξ = ξ₀ (s/s₀)^{−μ}. Errors σ_ξ propagate
/// as σ_{ln ξ} = σ_ξ/ξ; zero errors fall back to unweighted.
pub fn fit_power_law(points: &[(f64, f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(KzqError::Fit(format!(
            "power-law fit needs at least 3 points, have {}",
            points.len()
        )));
    }
    let bad: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(s, xi, _)| !(s > 0.0 && xi > 0.0))
        .map(|&(s, xi, _)| (s, xi))
        .collect();
    if !bad.is_empty() {
        return Err(KzqError::Fit(format!(
            "nonpositive rate or correlation length in points {bad:?}"
        )));
    }
    let s0 = (points.iter().map(|p| p.0.ln()).sum::<f64>() / points.len() as f64).exp();
    let weighted = points.iter().all(|&(_, xi, e)| e > 0.0 && xi > 0.0);
    let xs: Vec<f64> = points.iter().map(|p| (p.0 / s0).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let ws: Vec<f64> = points
        .iter()
        .map(|&(_, xi, e)| if weighted { (xi / e).powi(2) } else { 1.0 })
        .collect();
    let sw: f64 = ws.iter().sum();
    let sx: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum();
    let sy: f64 = ys.iter().zip(&ws).map(|(y, w)| y * w).sum();
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| x * x * w).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| x * y * w)
        .sum();
    let det = sw * sxx - sx * sx;
    if det <= 0.0 {
        return Err(KzqError::Fit("degenerate rate axis".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let residual: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / sw;
    // Slope standard error; for unweighted fits scale by the residual
    // variance, for weighted fits use the propagated errors directly.
    let var_scale = if weighted {
        1.0
    } else {
        let dof = (points.len() as f64 - 2.0).max(1.0);
        residual * points.len() as f64 / dof
    };
    let mu_err = (var_scale * sw / det).sqrt();
    Ok(ScalingFit {
        mu: -slope,
        mu_err,
        xi0: intercept.exp(),
        s0,
        n_points: points.len(),
        residual,
    })
}

/// Fits the piecewise saturation model: ξ follows the power law for
/// s ≥ s_c and is constant (continuously matched) below it. Points with
/// ξ < R_B/a are discarded first; returns the admissible rate window.
pub fn fit_rate_window(points: &[(f64, f64, f64)], rb_over_a: f64) -> Result<RateWindow> {
    let mut pts: Vec<(f64, f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(_, xi, _)| xi > rb_over_a)
        .collect();
    if pts.is_empty() {
        return Err(KzqError::Fit(format!(
            "every point has ξ below the blockade radius {rb_over_a}"
        )));
    }
    if pts.len() < 5 {
        return Err(KzqError::Fit(format!(
            "rate-window fit needs at least 5 usable points, have {}",
            pts.len()
        )));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite rates"));
    let decades = (pts.last().unwrap().0 / pts[0].0).log10();
    if decades < 1.5 {
        return Err(KzqError::Fit(format!(
            "rate-window fit needs >= 1.5 decades of rates, have {decades:.2}"
        )));
    }
    let sse_of = |fit: &ScalingFit, subset: &[(f64, f64, f64)], plateau: Option<(f64, f64)>| {
        let mut sse = 0.0;
        for &(s, xi, _) in subset {
            let model = match plateau {
                Some((sc, v)) if s < sc => v,
                _ => fit.xi0 * (s / fit.s0).powf(-fit.mu),
            };
            sse += (xi.ln() - model.ln()).powi(2);
        }
        sse
    };
    // Pure power law as the no-saturation baseline.
    let base_fit = fit_power_law(&pts)?;
    let base_sse = sse_of(&base_fit, &pts, None);
    // Candidate s_c at geometric midpoints; left side must keep >= 2
    // points to call it a plateau, right side >= 3 to fit.
    let mut best: Option<(f64, f64, ScalingFit)> = None;
    for cut in 2..pts.len().saturating_sub(2) {
        let sc = (pts[cut - 1].0 * pts[cut].0).sqrt();
        let right = &pts[cut..];
        let fit = match fit_power_law(right) {
            Ok(f) => f,
            Err(_) => continue,
        };
        // Continuity: plateau value is the power law evaluated at s_c.
        let plateau = fit.xi0 * (sc / fit.s0).powf(-fit.mu);
        let sse = sse_of(&fit, &pts, Some((sc, plateau)));
        if best.as_ref().map_or(true, |b| sse < b.1) {
            best = Some((sc, sse, fit));
        }
    }
    let (s_c, plateau_xi) = match best {
        // Require a decisive improvement over the pure power law; small
        // gains are noise and the model reduces to no saturation.
        Some((sc, sse, fit)) if sse < 0.5 * base_sse => {
            (Some(sc), Some(fit.xi0 * (sc / fit.s0).powf(-fit.mu)))
        }
        _ => (None, None),
    };
    let s_min = match s_c {
        Some(sc) => pts
            .iter()
            .map(|p| p.0)
            .find(|&s| s > sc)
            .expect("points above s_c exist by construction"),
        None => pts[0].0,
    };
    let s_max = pts.last().unwrap().0;
    Ok(RateWindow {
        s_c,
        s_min,
        s_max,
        plateau_xi,
    })
}

/// One curve of a collapse family: y(x) measured at sweep rate `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CollapseMode {
    /// Rescale distance: x → (s/s₀)^μ x (amplitudes pre-normalized by the
    /// caller).
    Spatial,
    /// Finite-time scaling: y → (s/s₀)^μ y and x → (s/s₀)^κ x.
    FiniteTime,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CollapseExponents {
    pub mu: f64,
    /// Detuning-axis exponent; only used in finite-time mode.
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseResult {
    /// Mean squared deviation from the pointwise median curve on the common
    /// grid, normalized by the pooled variance.
    pub residual: f64,
    pub rescaled: Vec<Trace>,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    // xs strictly increasing.
    match xs.binary_search_by(|v| v.partial_cmp(&x).expect("finite")) {
        Ok(i) => ys[i],
        Err(0) => ys[0],
        Err(i) if i >= xs.len() => *ys.last().expect("nonempty"),
        Err(i) => {
            let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] + t * (ys[i] - ys[i - 1])
        }
    }
}

/// Applies the chosen rescaling and scores the collapse against the
/// pointwise median curve on a common grid.
pub fn rescale_collapse(
    traces: &[Trace],
    s0: f64,
    mode: CollapseMode,
    exps: CollapseExponents,
) -> Result<CollapseResult> {
    if traces.is_empty() {
        return Err(KzqError::Domain("collapse needs at least one curve".into()));
    }
    if !(s0 > 0.0) {
        return Err(KzqError::Domain(format!(
            "reference rate must be positive, got {s0}"
        )));
    }
    let mut rescaled = Vec::with_capacity(traces.len());
    for t in traces {
        if t.x.len() != t.y.len() || t.x.len() < 2 {
            return Err(KzqError::Domain(
                "each curve needs >= 2 (x, y) points".into(),
            ));
        }
        if t.x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KzqError::Domain("curve x values must be increasing".into()));
        }
        let f = t.s / s0;
        let (x, y): (Vec<f64>, Vec<f64>) = match mode {
            CollapseMode::Spatial => (
                t.x.iter().map(|&x| x * f.powf(exps.mu)).collect(),
                t.y.clone(),
            ),
            CollapseMode::FiniteTime => (
                t.x.iter().map(|&x| x * f.powf(exps.kappa)).collect(),
                t.y.iter().map(|&y| y * f.powf(exps.mu)).collect(),
            ),
        };
        rescaled.push(Trace { s: t.s, x, y });
    }
    if rescaled.len() == 1 {
        return Ok(CollapseResult {
            residual: 0.0,
            rescaled,
        });
    }
    // Common grid across the overlap of rescaled supports.
    let lo = rescaled
        .iter()
        .map(|t| t.x[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = rescaled
        .iter()
        .map(|t| *t.x.last().expect("nonempty"))
        .fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return Err(KzqError::Domain(
            "rescaled curves have no common support".into(),
        ));
    }
    let n_grid = 64usize;
    let grid: Vec<f64> = (0..n_grid)
        .map(|k| lo + (hi - lo) * k as f64 / (n_grid - 1) as f64)
        .collect();
    let samples: Vec<Vec<f64>> = rescaled
        .iter()
        .map(|t| grid.iter().map(|&x| interp(&t.x, &t.y, x)).collect())
        .collect();
    let mut sq_dev = 0.0;
    let mut pooled: Vec<f64> = Vec::with_capacity(n_grid * samples.len());
    for k in 0..n_grid {
        let mut col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let m = col.len();
        let median = if m % 2 == 1 {
            col[m / 2]
        } else {
            0.5 * (col[m / 2 - 1] + col[m / 2])
        };
        for s in &samples {
            sq_dev += (s[k] - median).powi(2);
        }
        pooled.extend(col);
    }
    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pooled.len() as f64;
    let residual = if var > 0.0 {
        sq_dev / (pooled.len() as f64 * var)
    } else {
        0.0
    };
    Ok(CollapseResult { residual, rescaled })
}

/// Bulk excitation-pair statistics: f_N counts consecutive excitation pairs
/// at spacing N (interior intact by construction), p_N = N·f_N / Σ i·f_i.
/// Domain walls are pair positions whose spacing deviates from the dominant
/// period.
pub fn domain_stats(ensemble: &ShotEnsemble, trim: usize) -> Result<DomainStats> {
    let n = ensemble.n_sites;
    if n < 2 * trim + 2 {
        return Err(KzqError::Domain(format!(
            "bulk window too small: {n} sites with trim {trim}"
        )));
    }
    let (lo, hi) = (trim, n - trim);
    let mut f: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pair_lists: Vec<Vec<(usize, usize)>> = Vec::with_capacity(ensemble.len());
    for shot in &ensemble.shots {
        let exc: Vec<usize> = (lo..hi).filter(|&i| shot[i] != 0).collect();
        let mut pairs = Vec::new();
        for w in exc.windows(2) {
            let spacing = w[1] - w[0];
            *f.entry(spacing).or_insert(0) += 1;
            pairs.push((w[0], spacing));
        }
        pair_lists.push(pairs);
    }
    let total: usize = f.iter().map(|(&sp, &cnt)| sp * cnt).sum();
    if total == 0 {
        return Ok(DomainStats {
            f,
            p: BTreeMap::new(),
            walls: vec![Vec::new(); ensemble.len()],
            empty: true,
        });
    }
    let p: BTreeMap<usize, f64> = f
        .iter()
        .map(|(&sp, &cnt)| (sp, (sp * cnt) as f64 / total as f64))
        .collect();
    let dominant = *p
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .expect("nonempty")
        .0;
    let walls: Vec<Vec<usize>> = pair_lists
        .iter()
        .map(|pairs| {
            pairs
                .iter()
                .filter(|&&(_, sp)| sp != dominant)
                .map(|&(pos, _)| pos)
                .collect()
        })
        .collect();
    Ok(DomainStats {
        f,
        p,
        walls,
        empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn neel_pair_ensemble(n: usize, copies: usize) -> ShotEnsemble {
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let b: Vec<u8> = (0..n).map(|i| ((i + 1) % 2) as u8).collect();
        let mut shots = Vec::new();
        for _ in 0..copies {
            shots.push(a.clone());
            shots.push(b.clone());
        }
        ShotEnsemble::new(n, shots, 0).unwrap()
    }

    #[test]
    fn single_configuration_has_zero_correlations() {
        let shot: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let e = ShotEnsemble::new(30, vec![shot.clone(), shot], 1).unwrap();
        let c = correlation_function(&e, 8).unwrap();
        assert!(c.degenerate);
        for (&g, &s) in c.g.iter().zip(&c.sem) {
            assert!(g.abs() < 1e-12 && s.abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_neel_gives_alternating_quarter() {
        let e = neel_pair_ensemble(30, 5);
        let c = correlation_function(&e, 8).unwrap();
        for (k, &r) in c.r.iter().enumerate() {
            let expect = if r % 2 == 0 { 0.25 } else { -0.25 };
            assert!(
                (c.g[k] - expect).abs() < 1e-12,
                "r={r}: {} vs {expect}",
                c.g[k]
            );
        }
    }

    #[test]
    fn shot_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shots: Vec<Vec<u8>> = (0..40)
            .map(|_| (0..25).map(|_| rng.gen::<bool>() as u8).collect())
            .collect();
        let mut rev = shots.clone();
        rev.reverse();
        let a = correlation_function(&ShotEnsemble::new(25, shots, 0).unwrap(), 8).unwrap();
        let b = correlation_function(&ShotEnsemble::new(25, rev, 0).unwrap(), 8).unwrap();
        for k in 0..a.r.len() {
            assert!((a.g[k] - b.g[k]).abs() < 1e-12);
            assert!((a.sem[k] - b.sem[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn jackknife_tracks_sampling_error() {
        // Independent coin-flip sites: G(r>0) has mean 0 and a known
        // sampling error; the jackknife must be the right order of
        // magnitude (not 0, not 10x off).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shots: Vec<Vec<u8>> = (0..400)
            .map(|_| (0..30).map(|_| rng.gen::<bool>() as u8).collect())
            .collect();
        let e = ShotEnsemble::new(30, shots, 0).unwrap();
        let c = correlation_function(&e, 8).unwrap();
        let k = c.r.iter().position(|&r| r == 3).unwrap();
        assert!(c.sem[k] > 1e-4 && c.sem[k] < 1e-1, "sem {}", c.sem[k]);
        assert!(c.g[k].abs() < 5.0 * c.sem[k] + 0.02);
    }

    #[test]
    fn ideal_z4_values() {
        let expect = [1.5, -0.5, -0.5, -0.5, 1.5];
        for (r, &e) in expect.iter().enumerate() {
            assert!((ideal_correlation(4, r as f64).unwrap() - e).abs() < 1e-12);
        }
    }

    fn synthetic_corr(order: u8, a: f64, xi: f64, n_r: usize) -> CorrelationFunction {
        let r: Vec<usize> = (0..=n_r).collect();
        let g: Vec<f64> = r
            .iter()
            .map(|&rr| {
                let rr = rr as f64;
                a * (-rr / xi).exp() * ideal_correlation(order, rr).unwrap()
            })
            .collect();
        let sem = vec![0.0; r.len()];
        let pair_counts = vec![1; r.len()];
        CorrelationFunction {
            r,
            g,
            sem,
            pair_counts,
            trim: 0,
            degenerate: false,
        }
    }

    #[test]
    fn recovers_planted_correlation_length() {
        let c = synthetic_corr(2, 0.2, 5.0, 20);
        let fit = fit_correlation_length(&c, FitMode::DensityWave(2)).unwrap();
        assert!((fit.xi - 5.0).abs() / 5.0 < 0.01, "xi {}", fit.xi);
        assert!((fit.amplitude - 0.2).abs() < 1e-3);
        assert!(!fit.unreliable);
    }

    #[test]
    fn modulus_and_density_wave_agree_on_z2_data() {
        let c = synthetic_corr(2, 0.15, 4.0, 20);
        let dw = fit_correlation_length(&c, FitMode::DensityWave(2)).unwrap();
        let md = fit_correlation_length(&c, FitMode::Modulus).unwrap();
        assert!((dw.xi - md.xi).abs() / dw.xi < 0.05, "{} vs {}", dw.xi, md.xi);
    }

    #[test]
    fn infinite_range_order_is_flagged() {
        // Mixed Néel: |G| = 1/4 at every distance; ξ runs into the fit
        // bound and the amplitude approaches 1/4.
        let e = neel_pair_ensemble(40, 5);
        let c = correlation_function(&e, 8).unwrap();
        let fit = fit_correlation_length(&c, FitMode::DensityWave(2)).unwrap();
        assert!(fit.unreliable, "xi {}", fit.xi);
        assert!((fit.amplitude - 0.25).abs() / 0.25 < 0.01);
    }

    #[test]
    fn power_law_exact_recovery() {
        let pts: Vec<(f64, f64, f64)> = (0..8)
            .map(|k| {
                let s = 0.5 * 1.4f64.powi(k);
                (s, 10.0 * s.powf(-0.5), 0.0)
            })
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.mu - 0.5).abs() < 1e-10, "mu {}", fit.mu);
        assert!(fit.mu_err < 1e-6);
    }

    #[test]
    fn power_law_scale_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(f64, f64, f64)> = (0..10)
            .map(|k| {
                let s = 0.3 * 1.5f64.powi(k);
                let xi = 8.0 * s.powf(-0.37) * (1.0 + 0.05 * (rng.gen::<f64>() - 0.5));
                (s, xi, 0.05 * xi)
            })
            .collect();
        let a = fit_power_law(&pts).unwrap();
        let scaled: Vec<(f64, f64, f64)> = pts.iter().map(|&(s, x, e)| (7.0 * s, x, e)).collect();
        let b = fit_power_law(&scaled).unwrap();
        assert!((a.mu - b.mu).abs() < 1e-10);
    }

    #[test]
    fn power_law_rejects_few_or_bad_points() {
        assert!(fit_power_law(&[(1.0, 2.0, 0.1), (2.0, 1.0, 0.1)]).is_err());
        assert!(fit_power_law(&[(1.0, 2.0, 0.1), (2.0, -1.0, 0.1), (3.0, 1.0, 0.1)]).is_err());
    }

    #[test]
    fn rate_window_recovers_planted_saturation() {
        // Plateau below s_c = 2, power law above.
        let sc = 2.0;
        let mu = 0.5;
        let pts: Vec<(f64, f64, f64)> = (0..12)
            .map(|k| {
                let s = 0.2 * 1.6f64.powi(k);
                let xi = if s < sc {
                    10.0 * (sc).powf(-mu)
                } else {
                    10.0 * s.powf(-mu)
                };
                (s, xi, 0.0)
            })
            .collect();
        let w = fit_rate_window(&pts, 0.1).unwrap();
        let got = w.s_c.expect("saturation detected");
        assert!((got - sc).abs() / sc < 0.35, "s_c {got}");
        assert!(w.s_min > got);
    }

    #[test]
    fn pure_power_law_has_no_saturation() {
        let pts: Vec<(f64, f64, f64)> = (0..10)
            .map(|k| {
                let s = 0.2 * 1.8f64.powi(k);
                (s, 5.0 * s.powf(-0.4), 0.0)
            })
            .collect();
        let w = fit_rate_window(&pts, 0.1).unwrap();
        assert!(w.s_c.is_none());
        assert!((w.s_min - pts[0].0).abs() < 1e-12);
    }

    #[test]
    fn rate_window_rejects_blockade_limited_data() {
        let pts: Vec<(f64, f64, f64)> = (0..8).map(|k| (1.0 + k as f64, 0.5, 0.0)).collect();
        assert!(fit_rate_window(&pts, 1.69).is_err());
    }

    fn collapse_family(mu: f64, rates: &[f64]) -> Vec<Trace> {
        // G_s(r) = g((s/s0)^mu r) with g(u) = exp(-u) cos(u).
        rates
            .iter()
            .map(|&s| {
                let x: Vec<f64> = (1..=400).map(|k| k as f64 * 0.05).collect();
                let y: Vec<f64> = x
                    .iter()
                    .map(|&r| {
                        let u = s.powf(mu) * r;
                        (-u).exp() * u.cos()
                    })
                    .collect();
                Trace { s, x, y }
            })
            .collect()
    }

    #[test]
    fn collapse_residual_minimized_at_true_exponent() {
        let rates = [0.5, 1.0, 2.0, 4.0];
        for &true_mu in &[0.3, 0.5, 0.7] {
            let family = collapse_family(true_mu, &rates);
            let res_at = |mu: f64| {
                rescale_collapse(
                    &family,
                    1.0,
                    CollapseMode::Spatial,
                    CollapseExponents { mu, kappa: 0.0 },
                )
                .unwrap()
                .residual
            };
            let at_true = res_at(true_mu);
            // Bounded below only by linear-interpolation error on the grid.
            assert!(at_true < 1e-3, "residual {at_true} at mu {true_mu}");
            assert!(at_true < res_at(true_mu - 0.2));
            assert!(at_true < res_at(true_mu + 0.2));
        }
    }

    #[test]
    fn single_curve_collapses_trivially() {
        let family = collapse_family(0.5, &[1.0]);
        let out = rescale_collapse(
            &family,
            1.0,
            CollapseMode::Spatial,
            CollapseExponents { mu: 0.5, kappa: 0.0 },
        )
        .unwrap();
        assert_eq!(out.residual, 0.0);
    }

    #[test]
    fn disjoint_supports_error() {
        let a = Trace {
            s: 1.0,
            x: vec![0.0, 1.0],
            y: vec![1.0, 0.5],
        };
        let b = Trace {
            s: 1000.0,
            x: vec![1.0, 2.0],
            y: vec![1.0, 0.5],
        };
        let out = rescale_collapse(
            &[a, b],
            1.0,
            CollapseMode::Spatial,
            CollapseExponents { mu: 1.0, kappa: 0.0 },
        );
        assert!(out.is_err());
    }

    #[test]
    fn finite_time_mode_rescales_both_axes() {
        let t = Trace {
            s: 4.0,
            x: vec![1.0, 2.0],
            y: vec![3.0, 5.0],
        };
        let out = rescale_collapse(
            &[t],
            1.0,
            CollapseMode::FiniteTime,
            CollapseExponents { mu: 0.5, kappa: 1.0 },
        )
        .unwrap();
        assert!((out.rescaled[0].x[0] - 4.0).abs() < 1e-12);
        assert!((out.rescaled[0].y[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_domain_fractions() {
        // One shot with two spacing-2 pairs and one spacing-3 pair:
        // p2 = 4/7, p3 = 3/7.
        let mut shot = vec![0u8; 20];
        for &i in &[5, 7, 9, 12] {
            shot[i] = 1;
        }
        let e = ShotEnsemble::new(20, vec![shot], 0).unwrap();
        let d = domain_stats(&e, 4).unwrap();
        assert_eq!(d.f[&2], 2);
        assert_eq!(d.f[&3], 1);
        assert!((d.p[&2] - 4.0 / 7.0).abs() < 1e-12);
        assert!((d.p[&3] - 3.0 / 7.0).abs() < 1e-12);
        // Dominant period 2 → the spacing-3 pair is a wall at site 9.
        assert_eq!(d.walls[0], vec![9]);
    }

    #[test]
    fn domain_probabilities_normalize_on_random_shots() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shots: Vec<Vec<u8>> = (0..1000)
            .map(|_| (0..30).map(|_| (rng.gen::<f64>() < 0.3) as u8).collect())
            .collect();
        let e = ShotEnsemble::new(30, shots, 0).unwrap();
        let d = domain_stats(&e, 8).unwrap();
        assert!(!d.empty);
        let total: f64 = d.p.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_bulk_is_flagged() {
        let e = ShotEnsemble::new(20, vec![vec![0; 20]], 0).unwrap();
        let d = domain_stats(&e, 4).unwrap();
        assert!(d.empty && d.p.is_empty());
    }

    #[test]
    fn uniform_spacing_gives_unit_probability() {
        let mut shot = vec![0u8; 24];
        for i in (6..18).step_by(3) {
            shot[i] = 1;
        }
        let e = ShotEnsemble::new(24, vec![shot], 0).unwrap();
        let d = domain_stats(&e, 4).unwrap();
        assert!((d.p[&3] - 1.0).abs() < 1e-12);
        assert!(d.walls[0].is_empty());
    }

    #[test]
    fn csv_emission_has_header_and_rows() {
        let c = synthetic_corr(2, 0.1, 3.0, 5);
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "r,G,sem,N_r");
        assert_eq!(lines.len(), 7);
    }
}
