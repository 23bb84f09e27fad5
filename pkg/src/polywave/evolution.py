"""Spectral Schrodinger propagation and frequency-localised Strichartz experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .littlewood_paley import band_indices, cutoff, dyadic_profile
from .spectral import SpectralBasis, SpectralState, integrator, real_matmul, sobolev_norm

MIN_NODES = 33
_CHUNK_ELEMENTS = 6_000_000


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class AdmissiblePair:
    p: float
    q: float

    def __post_init__(self):
        if not self.p > 2:
            raise EvolutionError(f"p must exceed 2 (got {self.p})")
        if not self.q >= 2:
            raise EvolutionError(f"q must be at least 2 (got {self.q})")
        gap = 2.0 / self.p + 2.0 / self.q - 1.0
        if abs(gap) > 1e-12:
            raise EvolutionError(f"2/p + 2/q = {1 + gap!r}, not 1")

    @classmethod
    def from_p(cls, p: float) -> "AdmissiblePair":
        return cls(p, 2.0 * p / (p - 2.0))


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    samples: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise EvolutionError("t_start must precede t_end")
        if self.samples < 9:
            raise EvolutionError("a time grid needs at least 9 samples")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.samples)

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


def propagate(basis: SpectralBasis, f: SpectralState, t: float) -> SpectralState:
    """``exp(-i t Delta) f``: rotate coefficient j by ``-t lambda_j^2``."""
    phase = np.exp(-1j * t * basis.eigenvalues)
    c = f.coeffs
    return SpectralState(phase.reshape((-1,) + (1,) * (c.ndim - 1)) * c, f.basis_ref)


def suggested_nodes(eigs: np.ndarray, length: float, minimum: int = MIN_NODES) -> int:
    """Odd Simpson node count: ``minimum`` nodes per interval of length ``1/lambda_max``.

    For band-limited data ``|u(t)|_{L^q}`` varies on that scale; the phase
    spread inside one interval is averaged out by the spatial norm.
    """
    eigs = np.asarray(eigs)
    lam = math.sqrt(float(eigs.max())) if eigs.size else 0.0
    pieces = max(1, math.ceil(length * lam - 1e-9))
    return (minimum - 1) * pieces + 1


def _space_norms(basis, mesh, coeffs, times, q, support):
    """``|u(t)|_{L^q}`` for each time (rows) and sample (columns)."""
    quad = integrator(mesh)
    modes = basis.modes[:, support]
    eig = basis.eigenvalues[support]
    c = coeffs[support]
    if c.ndim == 1:
        c = c[:, None]
    n_samples = c.shape[1]
    out = np.empty((len(times), n_samples))
    step = max(1, _CHUNK_ELEMENTS // max(1, modes.shape[0] * n_samples))
    for i in range(0, len(times), step):
        tt = times[i: i + step]
        phase = np.exp(-1j * np.outer(eig, tt))                    # (m, nt)
        block = (phase[:, :, None] * c[:, None, :]).reshape(len(eig), -1)
        fields = real_matmul(modes, block)                          # (n, nt*S)
        out[i: i + len(tt)] = quad.norm(fields, q).reshape(len(tt), n_samples)
    return out


def lplq_norms(basis, mesh, f: SpectralState, pair: AdmissiblePair, grid: TimeGrid) -> np.ndarray:
    """``|u|_{L^p(grid; L^q)}`` for every sample in ``f`` (composite Simpson in time)."""
    c = f.coeffs
    support = np.flatnonzero(np.any(np.abs(c.reshape(c.shape[0], -1)) > 0, axis=1))
    n_samples = 1 if c.ndim == 1 else c.shape[1]
    if support.size == 0:
        return np.zeros(n_samples)
    norms = _space_norms(basis, mesh, c, grid.times, pair.q, support)
    return simpson(norms**pair.p, x=grid.times, axis=0) ** (1.0 / pair.p)


def lplq_norm(basis, mesh, f: SpectralState, pair: AdmissiblePair, grid: TimeGrid) -> float:
    """Strichartz norm ``(int |u(t)|_{L^q}^p dt)^(1/p)`` of ``u = exp(-it Delta) f``."""
    out = lplq_norms(basis, mesh, f, pair, grid)
    return float(out[0]) if out.size == 1 else out


def _ensemble(basis, idx, weight, size, seed, kind):
    if kind == "mixed":
        half = size // 2
        a = _ensemble(basis, idx, weight, half, seed, "focused")
        b = _ensemble(basis, idx, weight, size - half, seed + 7919, "gaussian")
        return SpectralState(np.concatenate([a.coeffs, b.coeffs], axis=1), basis.tag)
    rng = np.random.default_rng(seed)
    c = np.zeros((basis.count, size), dtype=complex)
    if kind == "gaussian":
        g = (rng.standard_normal((idx.size, size)) + 1j * rng.standard_normal((idx.size, size))) / math.sqrt(2.0)
        c[idx] = weight[:, None] * g
    elif kind == "focused":
        verts = rng.integers(0, basis.modes.shape[0], size=size)
        c[idx] = weight[:, None] * basis.modes[verts][:, idx].T
    else:
        raise EvolutionError(f"unknown ensemble kind {kind!r}")
    return SpectralState(c, basis.tag)


def band_ensemble(basis: SpectralBasis, k: int, size: int, seed: int, kind: str = "gaussian", mesh=None) -> SpectralState:
    """Random data ``u_k(0) = beta_k(sqrt(Delta)) u`` for ``size`` samples (columns).

    ``gaussian``: standard complex normal ``u`` coefficients on the trusted band.
    ``focused``: ``u`` a point mass at a random vertex, the band-limited
    profile that concentrates before dispersing.
    ``mixed``: the first half focused, the rest gaussian.
    """
    idx = band_indices(basis, k)
    if idx.size == 0:
        raise EvolutionError(f"band k={k} holds no trusted frequencies")
    return _ensemble(basis, idx, dyadic_profile(k)(basis.frequencies[idx]), size, seed, kind)


def mixed_ensemble(basis: SpectralBasis, k: int, size: int, seed: int, kind: str = "gaussian") -> SpectralState:
    """Data spread over bands ``0..k``: ``chi(2^-k sqrt(Delta)) u`` with ``u`` as in :func:`band_ensemble`."""
    lam = basis.trusted_frequencies
    weight = cutoff(lam / 2.0**k)
    idx = np.flatnonzero(weight > 0)
    if lam.size == 0 or lam[-1] < 2.0 ** (k - 1):
        raise EvolutionError(f"trusted spectrum does not reach band k={k}")
    return _ensemble(basis, idx, weight[idx], size, seed, kind)


def _check_band(basis, k, min_count=3):
    idx = band_indices(basis, k)
    if idx.size == 0:
        raise EvolutionError(f"band k={k} is empty")
    if idx.size < min_count:
        raise EvolutionError(f"band k={k} holds {idx.size} trusted frequencies, need {min_count}")
    return idx


def dyadic_experiment(basis, mesh, k: int, pair: AdmissiblePair, ensemble: SpectralState,
                      interval: int = 0, nodes: int | None = None, min_band: int = 3) -> np.ndarray:
    """``|u_k|_{L^p([m 2^-k, (m+1) 2^-k]; L^q)} / |u_k(0)|_{L^2}`` per sample."""
    idx = _check_band(basis, k, min_band)
    tau = 2.0 ** (-k)
    if nodes is None:
        nodes = suggested_nodes(basis.eigenvalues[idx], tau)
    grid = TimeGrid(interval * tau, (interval + 1) * tau, nodes)
    num = np.atleast_1d(lplq_norms(basis, mesh, ensemble, pair, grid))
    den = np.sqrt(np.sum(np.abs(ensemble.coeffs.reshape(basis.count, -1)) ** 2, axis=0))
    if np.any(den == 0):
        raise EvolutionError("zero initial data in ensemble")
    return num / den


def dyadic_strichartz(basis, mesh, k: int, pair: AdmissiblePair, T: float, ensemble: SpectralState,
                      nodes: int | None = None, min_band: int = 3) -> np.ndarray:
    """``|u_k|_{L^p([-T,T]; L^q)} / (2^{k/p} |u_k(0)|_{L^2})``, summed over dyadic intervals."""
    idx = _check_band(basis, k, min_band)
    tau = 2.0 ** (-k)
    if nodes is None:
        nodes = suggested_nodes(basis.eigenvalues[idx], tau)
    edges = np.arange(-T, T, tau)
    edges = np.append(edges, T)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-15:
            continue
        n = nodes if abs(b - a - tau) < 1e-12 else suggested_nodes(basis.eigenvalues[idx], b - a)
        part = np.atleast_1d(lplq_norms(basis, mesh, ensemble, pair, TimeGrid(a, b, n)))
        total = total + part**pair.p
    den = np.sqrt(np.sum(np.abs(ensemble.coeffs.reshape(basis.count, -1)) ** 2, axis=0))
    return total ** (1.0 / pair.p) / (2.0 ** (k / pair.p) * den)


def strichartz_ratio(basis, mesh, f: SpectralState, pair: AdmissiblePair, T: float, nodes: int | None = None):
    """``|u|_{L^p([-T,T]; L^q)} / |f|_{H^{1/p}}``."""
    c = f.coeffs.reshape(basis.count, -1)
    s = 1.0 / pair.p
    hs = np.sqrt(np.sum((1.0 + basis.eigenvalues[:, None]) ** s * np.abs(c) ** 2, axis=0))
    if np.any(hs == 0):
        raise EvolutionError("zero data")
    support = np.flatnonzero(np.any(np.abs(c) > 0, axis=1))
    if nodes is None:
        nodes = suggested_nodes(basis.eigenvalues[support], 2.0 * T)
    out = np.atleast_1d(lplq_norms(basis, mesh, f, pair, TimeGrid(-T, T, nodes))) / hs
    return float(out[0]) if out.size == 1 else out


def sobolev_aggregate(basis: SpectralBasis, f: SpectralState, p: float) -> tuple[float, float]:
    """``sum_k 2^{2k/p} |u_k(0)|^2`` and ``|u(0)|^2_{H^{1/p}}``."""
    from .littlewood_paley import dyadic_index_range

    c2 = np.abs(f.coeffs) ** 2
    total = 0.0
    for k in dyadic_index_range(float(basis.frequencies.max())):
        total += 2.0 ** (2 * k / p) * float(np.sum(dyadic_profile(k)(basis.frequencies) ** 2 * c2))
    return total, sobolev_norm(basis, f, 1.0 / p) ** 2


def duhamel(basis: SpectralBasis, f: SpectralState, forcing: np.ndarray, grid: TimeGrid,
            backward: bool = False) -> np.ndarray:
    """Solve ``(D_t + Delta) u = F`` mode by mode on ``grid``.

    ``forcing`` holds ``F_hat_j(s)`` with shape (count, samples).  In the
    integrating-factor variable ``a_j = e^{i s lambda_j^2} c_j`` the equation
    reads ``a_j' = i e^{i s lambda_j^2} F_hat_j``; that right-hand side is
    taken piecewise linear in ``s`` and integrated exactly.  ``backward``
    starts from ``f`` at ``t_end`` and integrates down to ``t_start``.
    Returns coefficients of shape (count, samples).
    """
    forcing = np.asarray(forcing, dtype=complex)
    times = grid.times
    if forcing.shape != (basis.count, len(times)):
        raise EvolutionError(f"forcing shape {forcing.shape} does not match grid ({basis.count}, {len(times)})")
    eig = basis.eigenvalues[:, None]
    w = np.exp(1j * eig * times[None, :]) * forcing
    inc = 0.5 * (w[:, 1:] + w[:, :-1]) * np.diff(times)[None, :]
    cum = np.concatenate([np.zeros((basis.count, 1), complex), np.cumsum(inc, axis=1)], axis=1)
    if backward:
        anchor = times[-1]
        cum = cum - cum[:, -1:]
    else:
        anchor = times[0]
    a0 = np.exp(1j * basis.eigenvalues * anchor) * f.coeffs
    a = a0[:, None] + 1j * cum
    return np.exp(-1j * eig * times[None, :]) * a
