import math

import numpy as np
import pytest

from oracles import rectangle_eigenvalues
from polywave.evolution import (
    AdmissiblePair,
    EvolutionError,
    TimeGrid,
    band_ensemble,
    duhamel,
    dyadic_experiment,
    dyadic_strichartz,
    lplq_norm,
    mixed_ensemble,
    propagate,
    sobolev_aggregate,
    strichartz_ratio,
    suggested_nodes,
)
from polywave.littlewood_paley import band_indices
from polywave.spectral import SpectralBasis, lq_norm

P4 = AdmissiblePair.from_p(4)


def random_state(basis, seed=0, n=None):
    rng = np.random.default_rng(seed)
    c = np.zeros(basis.count, complex)
    n = n or basis.count
    c[:n] = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return basis.state(c)


def test_admissible_pairs():
    assert P4.q == 4
    assert AdmissiblePair.from_p(6).q == pytest.approx(3)
    with pytest.raises(EvolutionError, match="2/p"):
        AdmissiblePair(4, 5)
    with pytest.raises(EvolutionError):
        AdmissiblePair(2, math.inf)
    with pytest.raises(EvolutionError):
        TimeGrid(0, 1, 5)
    with pytest.raises(EvolutionError):
        TimeGrid(1, 0, 33)


def test_suggested_nodes():
    assert suggested_nodes(np.array([0.0]), 1.0) == 33
    assert suggested_nodes(np.array([100.0]), 0.25) == 97
    assert suggested_nodes(np.array([100.0]), 0.25) % 2 == 1


def test_propagate_identity_and_mass(square):
    _, basis = square
    f = random_state(basis)
    np.testing.assert_array_equal(propagate(basis, f, 0.0).coeffs, f.coeffs)
    for t in (0.1, -3.7, 1e3):
        np.testing.assert_allclose(np.abs(propagate(basis, f, t).coeffs), np.abs(f.coeffs), rtol=1e-15)


def test_group_law(square):
    _, basis = square
    f = random_state(basis, 1)
    for s, t in ((0.3, 0.4), (-1.0, 2.5)):
        lhs = propagate(basis, propagate(basis, f, s), t).coeffs
        rhs = propagate(basis, f, s + t).coeffs
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_single_mode_phase(square):
    _, basis = square
    u = propagate(basis, basis.mode_state(7), 0.2)
    assert u.coeffs[7] == pytest.approx(np.exp(-0.2j * basis.eigenvalues[7]), abs=1e-15)


def test_revival_on_oracle_spectrum():
    eig = rectangle_eigenvalues(1, 1, 50, "dirichlet")
    basis = SpectralBasis(np.sqrt(eig), np.eye(50), np.eye(50), np.ones(50, np.int8), 50)
    c = np.random.default_rng(0).standard_normal(50) + 0j
    out = propagate(basis, basis.state(c), 2.0 / math.pi).coeffs
    np.testing.assert_allclose(out, c, atol=1e-11)


def test_stationary_norms(square):
    mesh, basis = square
    grid = TimeGrid(0.0, 0.5, 33)
    for j in (0, 9):
        f = basis.mode_state(j)
        expected = 0.5 ** 0.25 * lq_norm(mesh, basis.modes[:, j], 4)
        assert lplq_norm(basis, mesh, f, P4, grid) == pytest.approx(expected, rel=1e-10)


def test_time_self_convergence(square):
    mesh, basis = square
    f = random_state(basis, 2, 40)
    n = suggested_nodes(basis.eigenvalues[:40], 0.25)
    a = lplq_norm(basis, mesh, f, P4, TimeGrid(0, 0.25, n))
    b = lplq_norm(basis, mesh, f, P4, TimeGrid(0, 0.25, 2 * n - 1))
    assert abs(a - b) / b < 5e-3


def test_dyadic_single_mode(square):
    mesh, basis = square
    k = 3
    j = int(band_indices(basis, k)[0])
    f = basis.mode_state(j)
    r = dyadic_experiment(basis, mesh, k, P4, f)
    expected = 2.0 ** (-k / 4) * lq_norm(mesh, basis.modes[:, j], 4)
    assert r[0] == pytest.approx(expected, rel=1e-10)
    T = 0.3
    r = dyadic_strichartz(basis, mesh, k, P4, T, f)
    assert r[0] == pytest.approx((2 * T) ** 0.25 * expected, rel=1e-10)


def test_dyadic_strichartz_sums_intervals(square):
    mesh, basis = square
    k = 3
    ens = band_ensemble(basis, k, 4, seed=0)
    left = dyadic_experiment(basis, mesh, k, P4, ens, interval=-1)
    right = dyadic_experiment(basis, mesh, k, P4, ens, interval=0)
    # T = 2^-k covers exactly the two unit dyadic intervals around 0
    full = dyadic_strichartz(basis, mesh, k, P4, 2.0**-k, ens) * 2 ** (k / 4)
    np.testing.assert_allclose(full**4, left**4 + right**4, rtol=1e-12)


def test_band_errors(square):
    mesh, basis = square
    with pytest.raises(EvolutionError):
        dyadic_experiment(basis, mesh, 40, P4, basis.mode_state(0))
    with pytest.raises(EvolutionError):
        band_ensemble(basis, 40, 4, seed=0)
    with pytest.raises(EvolutionError, match="kind"):
        band_ensemble(basis, 3, 4, seed=0, kind="uniform")
    with pytest.raises(EvolutionError, match="reach"):
        mixed_ensemble(basis, 40, 4, seed=0)


def test_ensembles(square):
    _, basis = square
    k = 3
    idx = band_indices(basis, k)
    for kind in ("gaussian", "focused", "mixed"):
        ens = band_ensemble(basis, k, 6, seed=1, kind=kind)
        assert ens.coeffs.shape == (basis.count, 6)
        outside = np.setdiff1d(np.arange(basis.count), idx)
        assert np.all(ens.coeffs[outside] == 0)
        again = band_ensemble(basis, k, 6, seed=1, kind=kind)
        np.testing.assert_array_equal(ens.coeffs, again.coeffs)
    mixed = band_ensemble(basis, k, 6, seed=1, kind="mixed")
    focused = band_ensemble(basis, k, 3, seed=1, kind="focused")
    np.testing.assert_array_equal(mixed.coeffs[:, :3], focused.coeffs)
    low = mixed_ensemble(basis, 3, 4, seed=0)
    assert np.all(low.coeffs[basis.frequencies >= 8] == 0)
    assert np.all(low.coeffs[basis.frequencies <= 4][:, 0] != 0)


def test_strichartz_ratio_stationary(square):
    mesh, basis = square
    f = basis.mode_state(0)
    T = 0.5
    expected = (2 * T) ** 0.25 * lq_norm(mesh, basis.modes[:, 0], 4)
    assert strichartz_ratio(basis, mesh, f, P4, T) == pytest.approx(expected, rel=1e-10)
    with pytest.raises(EvolutionError):
        strichartz_ratio(basis, mesh, basis.state(np.zeros(basis.count)), P4, T)


def test_sobolev_aggregate_comparable(square):
    _, basis = square
    f = random_state(basis, 3)
    agg, hs = sobolev_aggregate(basis, f, 4)
    assert 0.25 <= agg / hs <= 4


def test_duhamel_free(square):
    _, basis = square
    f = random_state(basis, 4)
    grid = TimeGrid(0.0, 0.4, 17)
    out = duhamel(basis, f, np.zeros((basis.count, 17)), grid)
    for i, t in enumerate(grid.times):
        np.testing.assert_array_equal(out[:, i], propagate(basis, f, t).coeffs)


def test_duhamel_resonant(square):
    _, basis = square
    j = 11
    lam2 = basis.eigenvalues[j]
    f = random_state(basis, 5)
    grid = TimeGrid(0.0, 1.3, 41)
    t = grid.times
    F = np.zeros((basis.count, len(t)), complex)
    F[j] = np.exp(-1j * t * lam2)
    out = duhamel(basis, f, F, grid)
    expected = np.exp(-1j * t * lam2) * (f.coeffs[j] + 1j * t)
    np.testing.assert_allclose(out[j], expected, rtol=0, atol=1e-10)


def test_duhamel_backward(square):
    _, basis = square
    f = random_state(basis, 6)
    grid = TimeGrid(-0.5, 0.0, 21)
    out = duhamel(basis, f, np.zeros((basis.count, 21)), grid, backward=True)
    np.testing.assert_allclose(out[:, -1], f.coeffs, atol=1e-14)
    np.testing.assert_allclose(out[:, 0], propagate(basis, f, -0.5).coeffs, atol=1e-12)
    with pytest.raises(EvolutionError, match="shape"):
        duhamel(basis, f, np.zeros((3, 21)), grid)
