"""Acceptance criteria 1-11.

Each test records one ``criterion N: PASS|FAIL`` line; the lines are
printed together in the terminal summary (see ``conftest.py``) and the test
itself asserts the same condition.
"""

import math
import time

import numpy as np

from conftest import record_criterion, square_mesh
from oracles import doubled_rectangle_eigenvalues, rectangle_eigenvalues
from polywave.cone_kernel import (
    ConeParams,
    HeatQuery,
    cheeger_compare,
    cone_diagonal_heat,
    diffraction_integral,
    min_admissible_time,
)
from polywave.evolution import (
    AdmissiblePair,
    TimeGrid,
    band_ensemble,
    duhamel,
    dyadic_experiment,
    mixed_ensemble,
    propagate,
    strichartz_ratio,
)
from polywave.littlewood_paley import (
    dyadic_index_range,
    dyadic_profile,
    make_bump,
    mihlin_norm,
    mihlin_theta_sup,
    project,
    single_mode_scalar,
    squarefunction,
    widened_profile,
)
from polywave.mesh import assemble
from polywave.spectral import EVEN, ODD, classify_parity, eigenbasis

P4 = AdmissiblePair.from_p(4)
KS = np.arange(2, 7)


def check(n, ok, detail):
    record_criterion(n, bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def slope(values):
    return float(np.polyfit(KS, np.log(values), 1)[0])


# 1 -------------------------------------------------------------------------

def test_criterion_01_eigenvalue_oracle():
    start = time.perf_counter()
    errors = {}
    for h in (0.08, 0.04, 0.02):
        mesh = square_mesh(1.0, h)
        worst = 0.0
        for parity, bc in (("odd", "dirichlet"), ("even", "neumann")):
            computed = eigenbasis(assemble(mesh, parity=parity), 10).eigenvalues
            exact = rectangle_eigenvalues(1, 1, 10, bc)
            worst = max(worst, float(np.max(np.abs(computed - exact) / np.maximum(exact, 1.0))))
        errors[h] = worst
    order = math.log2(errors[0.04] / errors[0.02])
    elapsed = time.perf_counter() - start
    ok = errors[0.02] < 0.01 and order >= 1.8 and elapsed <= 120
    check(1, ok, f"max rel err {errors[0.02]:.2e} at h=0.02, order {order:.2f}, {elapsed:.0f}s")


# 2 -------------------------------------------------------------------------

def test_criterion_02_doubling(square):
    mesh, basis = square
    n = basis.trusted
    oracle = doubled_rectangle_eigenvalues(1, 1, n)
    rel = np.abs(basis.frequencies[:n] - np.sqrt(oracle)) / np.maximum(np.sqrt(oracle), 1.0)
    labels = classify_parity(basis, mesh)[:n]
    # a mode is correctly labelled when its rank within its parity class
    # lands on the matching Dirichlet (odd) or Neumann (even) oracle value
    good = 0
    for label, bc in ((ODD, "dirichlet"), (EVEN, "neumann")):
        lam = basis.frequencies[:n][labels == label]
        ref = np.sqrt(rectangle_eigenvalues(1, 1, len(lam), bc))
        good += int(np.sum(np.abs(lam - ref) <= 0.01 * np.maximum(ref, 1.0)))
    frac = good / n
    check(2, rel.max() < 0.01 and frac >= 0.95,
          f"{n} trusted modes, max rel freq err {rel.max():.2e}, parity correct {frac:.1%}")


# 3 -------------------------------------------------------------------------

def test_criterion_03_partition(square12):
    _, basis = square12
    lam = basis.trusted_frequencies
    ks = dyadic_index_range(float(basis.frequencies.max()))
    total = sum(dyadic_profile(k)(lam) for k in ks)
    part_err = float(np.abs(total - 1).max())
    rng = np.random.default_rng(0)
    c = rng.standard_normal(basis.count) + 1j * rng.standard_normal(basis.count)
    state = basis.state(c)
    recon = sum(project(basis, k, state).coeffs for k in ks)
    recon_err = float(np.abs(recon - c).max() / np.abs(c).max())
    z = rng.uniform(0, 2.0**9, 100)
    wide_err = max(float(np.abs(widened_profile(k)(z) * dyadic_profile(k)(z) - dyadic_profile(k)(z)).max())
                   for k in range(11))
    ok = part_err <= 1e-12 and recon_err <= 4 * np.finfo(float).eps and wide_err <= 1e-12
    check(3, ok, f"partition {part_err:.1e}, reconstruction {recon_err:.1e}, widened {wide_err:.1e}")


# 4 -------------------------------------------------------------------------

def test_criterion_04_scaled_bound(square12):
    _, basis = square12
    lam = basis.trusted_frequencies
    z = np.linspace(0, 1, 200001)
    bound = 16 * float(make_bump()(z).max())
    worst = 0.0
    ok = True
    for k in dyadic_index_range(float(lam.max())):
        val = float(np.max(2.0 ** (-2 * k) * lam**2 * dyadic_profile(k)(lam)))
        worst = max(worst, val)
        ok &= val <= bound
    check(4, ok, f"largest scaled value {worst:.4f} against 16 max beta = {bound:.4f}")


# 5 -------------------------------------------------------------------------

def test_criterion_05_squarefunction(square12):
    mesh, basis = square12
    rng = np.random.default_rng(5)
    intervals = {}
    for cut in (32.0, 64.0):
        n = int(np.searchsorted(basis.trusted_frequencies, cut, side="right"))
        c = np.zeros((basis.count, 64), complex)
        c[:n] = rng.standard_normal((n, 64)) + 1j * rng.standard_normal((n, 64))
        state = basis.state(c)
        for q in (4.0, 6.0):
            _, ratio = squarefunction(basis, mesh, state, q)
            intervals[cut, q] = (float(ratio.min()), float(ratio.max()))
    moves = []
    for q in (4.0, 6.0):
        (c1, C1), (c2, C2) = intervals[32.0, q], intervals[64.0, q]
        moves += [abs(c2 - c1) / c1, abs(C2 - C1) / C1]
    scal = np.array([single_mode_scalar(x) for x in basis.trusted_frequencies])
    scalar_ok = bool(scal.min() >= 1 / math.sqrt(3) and scal.max() <= 1)
    desc = ", ".join(f"q={q:g} cut={c:g} [{lo:.3f}, {hi:.3f}]" for (c, q), (lo, hi) in intervals.items())
    check(5, max(moves) < 0.25 and scalar_ok,
          f"{desc}; largest endpoint move {max(moves):.1%}; single-mode scalar in [{scal.min():.4f}, {scal.max():.4f}]")


# 6 -------------------------------------------------------------------------

def test_criterion_06_mihlin():
    sup6, norms = mihlin_theta_sup(8, 6)
    sup8, _ = mihlin_theta_sup(8, 8)
    sup_k, _ = mihlin_theta_sup(10, 6)
    spread = max(abs(sup8 - sup6), abs(sup_k - sup6)) / sup6
    beta_norms = [mihlin_norm(dyadic_profile(k), 2) for k in range(1, 11)]
    k_spread = max(beta_norms) - min(beta_norms)
    check(6, len(norms) == 64 and spread < 0.01 and k_spread <= 1e-10,
          f"theta sup {sup6:.6f} (64 theta), variation {spread:.1e}; beta_k norms spread {k_spread:.1e}")


# 7 -------------------------------------------------------------------------

def test_criterion_07_dyadic_no_growth(square12):
    mesh, basis = square12
    start = time.perf_counter()
    maxima = []
    for k in KS:
        ens = band_ensemble(basis, int(k), 32, seed=int(k), kind="mixed")
        maxima.append(float(dyadic_experiment(basis, mesh, int(k), P4, ens).max()))
    elapsed = time.perf_counter() - start
    s = slope(maxima)
    check(7, abs(s) <= 0.15 and elapsed <= 600,
          f"max ratios {np.round(maxima, 4).tolist()}, slope {s:+.3f}, {elapsed:.0f}s")


# 8 -------------------------------------------------------------------------

def test_criterion_08_full_strichartz(square12):
    mesh, basis = square12
    maxima = []
    for k in KS:
        f = mixed_ensemble(basis, int(k), 16, seed=int(k), kind="mixed")
        maxima.append(float(np.max(strichartz_ratio(basis, mesh, f, P4, 0.125))))
    s = slope(maxima)
    check(8, abs(s) <= 0.15, f"max ratios {np.round(maxima, 4).tolist()}, slope {s:+.3f}")


# 9 -------------------------------------------------------------------------

def test_criterion_09_cone_closed_forms():
    plane = half = 0.0
    for r in (0.0, 0.1, 0.5, 1.0):
        for t in (0.005, 0.05, 1.0):
            q = HeatQuery(r, t)
            plane = max(plane, abs(cone_diagonal_heat(ConeParams(1.0), q) * 4 * math.pi * t - 1))
            literal = (0.5 + math.exp(-r * r / t)) / (2 * math.pi * t)
            half = max(half, abs(cone_diagonal_heat(ConeParams(0.5), q) / literal - 1))
    zero = all(diffraction_integral(ConeParams(rho), HeatQuery(0.2, 0.01)) == 0.0 for rho in (1.0, 0.5, 1 / 3))
    val, err = diffraction_integral(ConeParams(1.5), HeatQuery(0.0, 1.0), with_error=True)
    ok = plane <= 1e-10 and half <= 1e-10 and zero and err <= 1e-10
    check(9, ok, f"rho=1 rel err {plane:.1e}; rho=1/2 against (1/2pi t)(1/2 + e^(-r^2/t)) rel err {half:.2e}; "
                 f"zero diffraction {zero}; rho=3/2 doubling change {err:.1e}")


# 10 ------------------------------------------------------------------------

def test_criterion_10_cheeger(square12):
    mesh, basis = square12
    t_min = min_admissible_time(basis)
    times = np.geomspace(t_min, 0.02, 6)
    rows = cheeger_compare(basis, mesh, ConeParams(0.5), (0.0, 0.0), [0.0, 0.05, 0.1], times)
    by_r = {}
    for row in rows:
        by_r.setdefault(round(row["r"], 6), []).append(row["rel_dev"])
    smallest = max(devs[0] for devs in by_r.values())
    monotone = all(np.all(np.diff(devs) >= 0) for devs in by_r.values())
    table = "; ".join(f"r={r:.3f}: " + " ".join(f"{d:.1e}" for d in devs) for r, devs in by_r.items())
    check(10, smallest < 1e-3 and monotone,
          f"t from {t_min:.4f} to 0.02, rel dev <1e-3 at t_min: {smallest < 1e-3}, "
          f"decreasing toward t_min: {monotone} ({table})")


# 11 ------------------------------------------------------------------------

def test_criterion_11_flow(square):
    _, basis = square
    rng = np.random.default_rng(11)
    f = basis.state(rng.standard_normal(basis.count) + 1j * rng.standard_normal(basis.count))
    mass = max(abs(propagate(basis, f, t).l2_norm() / f.l2_norm() - 1) for t in (-2.0, 0.0, 0.1, 7.5, 1e3))
    group = max(float(np.abs(propagate(basis, propagate(basis, f, s), t).coeffs
                             - propagate(basis, f, s + t).coeffs).max())
                for s, t in ((0.1, 0.2), (-1.5, 0.75), (3.0, 4.0))) / float(np.abs(f.coeffs).max())
    grid = TimeGrid(0.0, 1.0, 33)
    free = duhamel(basis, f, np.zeros((basis.count, 33)), grid)
    free_ok = all(np.array_equal(free[:, i], propagate(basis, f, t).coeffs) for i, t in enumerate(grid.times))
    j = 9
    F = np.zeros((basis.count, 33), complex)
    F[j] = np.exp(-1j * grid.times * basis.eigenvalues[j])
    forced = duhamel(basis, f, F, grid)[j]
    closed = np.exp(-1j * grid.times * basis.eigenvalues[j]) * (f.coeffs[j] + 1j * grid.times)
    res = float(np.abs(forced - closed).max())
    ok = mass <= 1e-13 and group <= 1e-12 and free_ok and res <= 1e-10
    check(11, ok, f"relative mass drift {mass:.1e}, group law {group:.1e}, free Duhamel exact {free_ok}, resonant {res:.1e}")
