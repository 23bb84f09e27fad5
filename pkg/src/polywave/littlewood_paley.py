"""Dyadic partition of unity in frequency, Rademacher randomisation, squarefunctions.

The bump is a telescoping difference ``beta(x) = chi(x) - chi(2x)`` of a
smooth step ``chi`` (1 below 1/2, 0 above 1), so partition identities hold
up to rounding rather than approximately.  Every profile takes frequency
(``lambda``) arguments.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import SpectralBasis, SpectralState, apply_multiplier, evaluate_on_mesh, lq_norm


def _s(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """0 for x <= 0, 1 for x >= 1, C-infinity in between."""
    x = np.asarray(x, dtype=float)
    a, b = _s(x), _s(1.0 - x)
    return a / (a + b)


def cutoff(zeta):
    """``chi``: 1 on [0, 1/2], 0 on [1, inf)."""
    z = np.asarray(zeta, dtype=float)
    out = np.where(z <= 0.5, 1.0, 0.0)
    mid = (z > 0.5) & (z < 1.0)
    out[mid] = smooth_step(2.0 * (1.0 - z[mid]))
    return out


@dataclass(frozen=True)
class MultiplierProfile:
    """A scalar function of frequency with known support."""

    eval: Callable[[np.ndarray], np.ndarray]
    support_hint: tuple[float, float]
    label: str

    def __call__(self, zeta):
        z = np.asarray(zeta, dtype=float)
        out = np.asarray(self.eval(z), dtype=float)
        lo, hi = self.support_hint
        return np.where((z < lo) | (z > hi), 0.0, out)

    def __mul__(self, other: "MultiplierProfile") -> "MultiplierProfile":
        lo = max(self.support_hint[0], other.support_hint[0])
        hi = min(self.support_hint[1], other.support_hint[1])
        return MultiplierProfile(lambda z: self(z) * other(z), (lo, hi), f"{self.label}*{other.label}")


def constant_profile(value: float = 1.0) -> MultiplierProfile:
    return MultiplierProfile(lambda z: np.full(np.shape(z), float(value)), (0.0, math.inf), f"const {value:g}")


def power_profile(power: float) -> MultiplierProfile:
    return MultiplierProfile(lambda z: np.asarray(z, dtype=float) ** power, (0.0, math.inf), f"power {power:g}")


def make_bump() -> MultiplierProfile:
    """``beta``: nonnegative, supported in (1/4, 1), and sum_k beta(2^-k z) = 1 for z >= 1."""
    return MultiplierProfile(lambda z: cutoff(z) - cutoff(2.0 * np.asarray(z)), (0.25, 1.0), "beta")


def _beta_k(k: int, z):
    z = np.asarray(z, dtype=float)
    if k == 0:
        return cutoff(z)
    scale = 2.0 ** (-k)
    return cutoff(scale * z) - cutoff(2.0 * scale * z)


def dyadic_profile(k: int) -> MultiplierProfile:
    """``beta_k(z) = beta(2^-k z)`` for k >= 1; ``beta_0 = 1 - sum_{k>=1} beta_k``.

    The telescoping construction makes ``beta_0`` equal to the cutoff itself.
    """
    if k < 0:
        raise ValueError("dyadic index must be nonnegative")
    support = (0.0, 1.0) if k == 0 else (2.0 ** (k - 2), 2.0**k)
    return MultiplierProfile(lambda z: _beta_k(k, z), support, f"beta k={k}")


def widened_profile(k: int) -> MultiplierProfile:
    """``beta_{k-1} + beta_k + beta_{k+1}`` with ``beta_{-1} = 0``; equals 1 on supp beta_k."""
    if k < 0:
        raise ValueError("dyadic index must be nonnegative")
    ks = [j for j in (k - 1, k, k + 1) if j >= 0]
    lo = 0.0 if min(ks) == 0 else 2.0 ** (min(ks) - 2)
    return MultiplierProfile(
        lambda z: sum(_beta_k(j, z) for j in ks), (lo, 2.0 ** (k + 1)), f"beta~ k={k}"
    )


def dyadic_index_range(lam_max: float) -> range:
    """Indices k whose beta_k can be nonzero somewhere on [0, lam_max]."""
    if lam_max < 1.0:
        return range(0, 1)
    return range(0, int(math.floor(math.log2(lam_max))) + 3)


def rademacher(m: int, theta):
    """``r_m(theta) = r_0(2^m theta)`` with r_0 = +1 on [0, 1/2], -1 on (1/2, 1), period 1."""
    if m < 0:
        raise ValueError("Rademacher index must be nonnegative")
    x = np.mod(np.ldexp(np.asarray(theta, dtype=float), m), 1.0)
    out = np.where(x <= 0.5, 1, -1)
    return int(out) if out.ndim == 0 else out


def randomized_profile(theta: float, k_max: int, widened: bool = False) -> MultiplierProfile:
    """``F_theta = sum_{k=0}^{k_max} r_k(theta) beta_k`` (or with the widened pieces).

    Valid for frequencies up to ``2**(k_max - 1)``, above which the omitted
    scales would contribute.
    """
    piece = widened_profile if widened else dyadic_profile
    pieces = [(rademacher(k, theta), piece(k)) for k in range(k_max + 1)]
    limit = 2.0 ** (k_max - 2 if widened else k_max - 1)

    def ev(z):
        z = np.asarray(z, dtype=float)
        if np.any(z > limit * (1 + 1e-12)):
            raise ValueError(f"k_max={k_max} too small for frequency {float(np.max(z)):g} (limit {limit:g})")
        return sum(sign * p(z) for sign, p in pieces)

    label = f"ftheta theta={theta!r} kmax={k_max}" + (" widened" if widened else "")
    return MultiplierProfile(ev, (0.0, limit), label)


def parse_profile(text: str) -> MultiplierProfile:
    """Inverse of ``profile.label`` for ``beta k=3`` and ``ftheta theta=0.40625 kmax=12``."""
    text = text.strip()
    if text == "beta":
        return make_bump()
    m = re.fullmatch(r"beta k=(\d+)", text)
    if m:
        return dyadic_profile(int(m.group(1)))
    m = re.fullmatch(r"beta~ k=(\d+)", text)
    if m:
        return widened_profile(int(m.group(1)))
    m = re.fullmatch(r"ftheta theta=([0-9.eE+-]+) kmax=(\d+)( widened)?", text)
    if m:
        return randomized_profile(float(m.group(1)), int(m.group(2)), bool(m.group(3)))
    raise ValueError(f"unrecognised profile {text!r}")


def log_derivatives(F, zeta_min: float, zeta_max: float, N: int, per_decade: int = 4096):
    """``(zeta d/dzeta)^k F`` for k = 0..N on a log-uniform grid.

    In ``x = log zeta`` the operator is d/dx, taken by repeated 5-point
    central differences.  The grid is ``2**e * exp(j * dx)`` with ``dx`` a
    whole fraction of ``log 2``, so dilating ``F`` by a power of two samples
    exactly the same values.
    """
    per_octave = max(8, int(round(per_decade * math.log10(2.0))))
    dx = math.log(2.0) / per_octave
    anchor = 2.0 ** math.floor(math.log2(zeta_min))
    j0 = int(math.floor(math.log(zeta_min / anchor) / dx))
    j1 = int(math.ceil(math.log(zeta_max / anchor) / dx))
    pad = 2 * N
    j = np.arange(j0 - pad, j1 + pad + 1)
    zeta = anchor * np.exp(j * dx)
    n = j1 - j0 + 1
    cur = np.asarray(F(zeta), dtype=float)
    out = [cur[pad: pad + n]]
    for level in range(1, N + 1):
        cur = (cur[:-4] - 8.0 * cur[1:-3] + 8.0 * cur[3:-1] - cur[4:]) / (12.0 * dx)
        off = pad - 2 * level
        out.append(cur[off: off + n])
    return zeta[pad: pad + n], out


def mihlin_norm(F: MultiplierProfile, N: int = 2, zeta_range: tuple[float, float] | None = None,
                per_decade: int = 4096) -> float:
    """``sup_{0<=k<=N} sup_zeta |(zeta d/dzeta)^k F(zeta)|`` on a log grid."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    if zeta_range is None:
        lo, hi = F.support_hint
        lo = lo / 2.0 if lo > 0 else 1e-3
        if F.label.startswith("ftheta"):
            # stay clear of the validity limit once the stencil padding is added
            hi = hi / 1.01
        else:
            hi = hi * 2.0 if math.isfinite(hi) else 1e3
        zeta_range = (lo, hi)
    _, derivs = log_derivatives(F, zeta_range[0], zeta_range[1], N, per_decade)
    sup = max(float(np.max(np.abs(d))) for d in derivs)
    if not math.isfinite(sup):
        raise ValueError("non-finite derivative estimate")
    return sup


def theta_grid(depth: int) -> np.ndarray:
    """Dyadic grid ``j / 2**depth`` enumerating every sign pattern of r_0..r_{depth-1}."""
    return np.arange(2**depth) / 2.0**depth


def mihlin_theta_sup(k_max: int, depth: int, N: int = 2, per_decade: int = 4096) -> tuple[float, np.ndarray]:
    """Supremum over the dyadic theta grid of the Mihlin norm of ``F_theta``."""
    norms = np.array([
        mihlin_norm(randomized_profile(th, k_max), N, per_decade=per_decade) for th in theta_grid(depth)
    ])
    return float(norms.max()), norms


def project(basis: SpectralBasis, k: int, state: SpectralState) -> SpectralState:
    """Littlewood-Paley piece ``u_k = beta_k(sqrt(Delta)) u``."""
    return apply_multiplier(basis, dyadic_profile(k), state)


def band_indices(basis: SpectralBasis, k: int, trusted_only: bool = True) -> np.ndarray:
    freqs = basis.trusted_frequencies if trusted_only else basis.frequencies
    return np.flatnonzero(dyadic_profile(k)(freqs) > 0)


def squarefunction_field(basis: SpectralBasis, state: SpectralState, widened: bool = False) -> np.ndarray:
    """Pointwise ``(sum_k |beta_k(sqrt(Delta)) a|^2)^(1/2)`` at the mesh vertices."""
    piece = widened_profile if widened else dyadic_profile
    total = None
    for k in dyadic_index_range(float(basis.frequencies.max())):
        part = evaluate_on_mesh(basis, apply_multiplier(basis, piece(k), state))
        sq = np.abs(part) ** 2
        total = sq if total is None else total + sq
    return np.sqrt(total)


def squarefunction(basis: SpectralBasis, mesh, state: SpectralState, q: float):
    """Squarefunction field and the ratio ``|S a|_q / |a|_q``."""
    if not 1 < q < math.inf:
        raise ValueError("q must lie in (1, inf)")
    field = squarefunction_field(basis, state)
    a = evaluate_on_mesh(basis, state)
    denom = lq_norm(mesh, a, q)
    if np.any(np.asarray(denom) == 0):
        raise ValueError("squarefunction ratio undefined for zero data")
    return field, lq_norm(mesh, field, q) / denom


def single_mode_scalar(lam: float) -> float:
    """``(sum_k beta_k(lam)^2)^(1/2)``: the squarefunction of a pure mode, divided by |phi|."""
    ks = dyadic_index_range(max(lam, 1.0))
    return float(math.sqrt(sum(float(dyadic_profile(k)(lam)) ** 2 for k in ks)))


@dataclass(frozen=True)
class RademacherSeq:
    theta: float
    depth: int

    def values(self) -> np.ndarray:
        return np.array([rademacher(m, self.theta) for m in range(self.depth)])


@dataclass(frozen=True)
class KhintchineReport:
    q: float
    c_lower: float
    c_upper: float
    l2_norms: np.ndarray
    lq_norms: np.ndarray


def rademacher_sum_norm(b, q: float, depth: int | None = None) -> float:
    """``|sum_m b_m r_m|_{L^q[0,1]}``, exact: the sum is constant on dyadic cells of size 2^-depth."""
    b = np.asarray(b)
    if b.size == 0:
        raise ValueError("empty coefficient sequence")
    depth = len(b) if depth is None else depth
    if depth < len(b):
        raise ValueError("depth must cover every Rademacher function used")
    mid = (np.arange(2**depth) + 0.5) / 2.0**depth
    G = sum(b[m] * rademacher(m, mid) for m in range(len(b)))
    return float(np.mean(np.abs(G) ** q) ** (1.0 / q))


def khintchine_check(b, q: float, theta_samples: int | None = None) -> KhintchineReport:
    """Empirical Khintchine constants ``c_q |G|_q <= |G|_2 <= C_q |G|_q``.

    ``b`` is one coefficient sequence or a 2-D ensemble (one per row).
    ``c_lower`` and ``c_upper`` are the min and max of ``|G|_2 / |G|_q``.
    """
    b = np.atleast_2d(np.asarray(b))
    if b.shape[1] == 0:
        raise ValueError("empty coefficient sequence")
    l2 = np.array([rademacher_sum_norm(row, 2.0, theta_samples) for row in b])
    exact = np.sqrt(np.sum(np.abs(b) ** 2, axis=1))
    if not np.allclose(l2, exact, rtol=1e-12, atol=0):
        raise AssertionError("orthonormality of Rademacher functions violated")
    lq = np.array([rademacher_sum_norm(row, q, theta_samples) for row in b])
    ratio = l2 / lq
    return KhintchineReport(q, float(ratio.min()), float(ratio.max()), l2, lq)


def duality_pairing(basis: SpectralBasis, mesh, a1: SpectralState, a2: SpectralState, q: float):
    """Both sides of ``|<a1, a2>| <= |S a1|_q |S~ a2|_q'``."""
    qp = q / (q - 1.0)
    lhs = abs(np.vdot(np.conj(a1.coeffs), a2.coeffs))  # bilinear pairing int a1 a2
    s1 = squarefunction_field(basis, a1)
    s2 = squarefunction_field(basis, a2, widened=True)
    return lhs, float(lq_norm(mesh, s1, q) * lq_norm(mesh, s2, qp))
