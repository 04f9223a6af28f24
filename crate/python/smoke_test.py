#!/usr/bin/env python3
"""Smoke test for the kzq_py extension module.

Builds nothing itself: run `cargo build -p kzq-py` first, then
`python3 python/smoke_test.py`. The script locates the compiled cdylib in
target/, imports it, and exercises each exposed operation once.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libkzq_py.so", "kzq_py.so", "libkzq_py.dylib")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("kzq_py cdylib not found; run `cargo build -p kzq-py` first")
    stage = Path(tempfile.mkdtemp(prefix="kzq_py_"))
    shutil.copy(lib, stage / "kzq_py.so")
    sys.path.insert(0, str(stage))
    import kzq_py

    return kzq_py


def main():
    kzq = load_module()

    # Exponent arithmetic.
    mu, kappa = kzq.kz_exponents(1.0, 1.0)
    assert abs(mu - 0.5) < 1e-12 and abs(kappa + 0.5) < 1e-12, (mu, kappa)
    table = kzq.exponent_table()
    assert abs(table["ising"]["mu"] - 0.5) < 1e-12, table

    # Interaction potential and its exponential-sum approximation.
    v12 = kzq.vdw_coupling(10, 1.5, 1, 2)
    v13 = kzq.vdw_coupling(10, 1.5, 1, 3)
    assert abs(v12 / v13 - 64.0) < 1e-9, (v12, v13)
    assert abs(kzq.exp_sum(2) - 2 ** -6) < 2e-4

    # A fast sweep through the transition on a small chain.
    result = kzq.run_sweep(
        n_sites=8,
        rb_over_a=1.2,
        delta0_mhz=-3.0,
        delta_f_mhz=4.0,
        rate_mhz_per_us=8.0,
        shots=200,
        seed=7,
        checkpoints_mhz=[0.0],
    )
    shots = result["shots"]
    assert len(shots) == 200 and len(shots[0]) == 8
    assert len(result["checkpoints"]) == 1
    assert all(0.0 <= o <= 1.0 for o in result["occupations"])

    # Determinism: same seed, same shots.
    again = kzq.run_sweep(
        n_sites=8,
        rb_over_a=1.2,
        delta0_mhz=-3.0,
        delta_f_mhz=4.0,
        rate_mhz_per_us=8.0,
        shots=200,
        seed=7,
        checkpoints_mhz=[0.0],
    )
    assert again["shots"] == shots

    # Correlation analysis on the sampled shots.
    corr = kzq.correlation_function(shots)
    assert corr["r"][0] == 0 and len(corr["g"]) == len(corr["r"])
    fit = kzq.fit_correlation_length(shots, mode="z2")
    assert fit["xi"] > 0.0, fit

    # Analysis on ideal Néel mixtures: G(1) = -1/4, p2 = 1.
    neel = [[1, 0] * 6, [0, 1] * 6] * 50
    corr = kzq.correlation_function(neel, trim=3)
    g1 = corr["g"][corr["r"].index(1)]
    assert abs(g1 + 0.25) < 1e-12, g1
    stats = kzq.domain_stats(neel, trim=3)
    assert abs(stats["p"][2] - 1.0) < 1e-12, stats

    # Detection noise flips roughly the expected number of sites.
    noisy = kzq.apply_detection_noise(neel, 0.1, 0.1, seed=3)
    flips = sum(
        a != b for row_a, row_b in zip(neel, noisy) for a, b in zip(row_a, row_b)
    )
    total = sum(len(row) for row in neel)
    assert 0.05 < flips / total < 0.15, flips / total

    # Power-law fit recovers a planted exponent.
    points = [(s, 3.0 * s ** -0.5, 0.01) for s in (1.0, 2.0, 4.0, 8.0)]
    fit = kzq.fit_power_law(points)
    assert abs(fit["mu"] - 0.5) < 1e-9, fit

    # A family that scales as y(x·(s/s0)^μ) collapses to one curve.
    curves = []
    x = [0.02 * k for k in range(200)]
    for s in (1.0, 4.0):
        y = [math.exp(-v * (s / 2.0) ** 0.5) for v in x]
        curves.append((s, x, y))
    assert kzq.collapse_residual(curves, mu=0.5, s0=2.0) < 1e-3

    # Chiral clock spectrum: real, sorted, threefold-degenerate ground
    # manifold in the ordered phase.
    energies = kzq.ccm_spectrum(6, f=0.1, j=1.0, k=6)
    assert energies == sorted(energies)
    assert abs(energies[0] - energies[2]) < 0.1 * abs(energies[0])

    print("kzq_py smoke test: all checks passed")


if __name__ == "__main__":
    main()
