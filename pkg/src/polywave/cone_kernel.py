"""On-diagonal heat kernel of the flat cone and comparison with the spectral kernel.

On the cone ``C(S^1_rho)`` (cross-section circumference ``2 pi rho``) the
diagonal heat kernel at radius ``r`` is

    P(t, r) = 1/(2 pi t) * [ cosine term - diffraction term ]

The cosine term sums point masses at the angles ``y_k`` in ``(0, pi]`` that
are multiples of ``2 pi rho``; the diffraction term is a rapidly decaying
integral proportional to ``sin(pi/rho)``, which vanishes for ``rho = 1/N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra
import scipy.sparse as sp

from .quadrature import gauss_legendre_panels
from .spectral import SpectralBasis

TRUNCATION_LEVEL = 1e-8


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved {achieved:.3g})")
        self.achieved = achieved


class TruncationError(ValueError):
    def __init__(self, t: float, t_min: float):
        super().__init__(f"t={t:g} below the smallest admissible time {t_min:.6g} for the resolved spectrum")
        self.t_min = t_min


@dataclass(frozen=True)
class ConeParams:
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("cone radius must be positive")

    @property
    def non_diffractive(self) -> bool:
        """True when ``1/rho`` is an integer, so ``sin(pi/rho) = 0``."""
        inv = 1.0 / self.rho
        return abs(inv - round(inv)) <= 1e-12 * max(1.0, inv)


@dataclass(frozen=True)
class HeatQuery:
    r: float
    t: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        if not self.t > 0:
            raise ValueError("t must be positive")


def geometric_terms(cone: ConeParams) -> np.ndarray:
    """Multiples of ``2 pi rho`` lying in ``(0, pi]``."""
    half_inv = 0.5 / cone.rho
    m_max = math.floor(half_inv + 1e-12 * max(1.0, half_inv))
    y = 2.0 * math.pi * cone.rho * np.arange(1, m_max + 1)
    if m_max and abs(half_inv - m_max) <= 1e-12 * max(1.0, half_inv):
        y[-1] = math.pi
    return y


def _inv_shifted_cosh(u, c):
    """``1 / (cosh(u) - c)`` without overflow for large ``u``."""
    u = np.asarray(u, dtype=float)
    e = np.exp(-u)
    return 2.0 * e / (1.0 + e * e - 2.0 * c * e)


def diffraction_kernel(cone: ConeParams, y) -> np.ndarray | float:
    """``(1/(2 pi rho)) sin(pi/rho) / (cosh(y/rho) - cos(pi/rho))``; zero when ``1/rho`` is an integer."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("y must be nonnegative")
    if cone.non_diffractive:
        out = np.zeros_like(y_arr)
    else:
        a = math.pi / cone.rho
        out = math.sin(a) * _inv_shifted_cosh(y_arr / cone.rho, math.cos(a)) / (2.0 * math.pi * cone.rho)
    return float(out) if out.ndim == 0 else out


def _diffraction_integrand(cone: ConeParams, a: float):
    def f(y):
        with np.errstate(over="ignore"):
            damp = np.exp(-a * (1.0 + np.cosh(y)))
        return damp * diffraction_kernel(cone, y)
    return f


def diffraction_integral(cone: ConeParams, query: HeatQuery, tol: float = 1e-10, order: int = 10,
                         max_doublings: int = 16, with_error: bool = False):
    """``int_0^inf e^{-(1+cosh y) r^2/2t} K_rho(y) dy`` with ``K_rho`` the diffraction kernel.

    Composite Gauss-Legendre on panels of width ``min(1, rho)``, halved
    until successive results agree to ``tol``.  The tail is cut where the
    integrand drops below ``1e-16`` of the running integral.
    """
    if cone.non_diffractive:
        return (0.0, 0.0) if with_error else 0.0
    a = query.r**2 / (2.0 * query.t)
    f = _diffraction_integrand(cone, a)
    width = min(1.0, cone.rho)
    y_max = width
    partial = gauss_legendre_panels(f, 0.0, y_max, width, order)
    while abs(float(f(np.array(y_max)))) > 1e-16 * max(abs(partial), 1e-300):
        y_max *= 2.0
        partial = gauss_legendre_panels(f, 0.0, y_max, width, order)
        if y_max > 1e6:
            raise ConvergenceError("tail did not decay", abs(float(f(np.array(y_max)))))
    prev = partial
    err = math.inf
    for _ in range(max_doublings):
        width *= 0.5
        cur = gauss_legendre_panels(f, 0.0, y_max, width, order)
        err = abs(cur - prev)
        prev = cur
        if err < tol:
            return (cur, err) if with_error else cur
    raise ConvergenceError("diffraction quadrature did not converge", err)


def cosine_term(cone: ConeParams, query: HeatQuery, pi_weight: float = 0.5) -> float:
    """``1/2 + sum_k w_k exp(-(1 - cos y_k) r^2 / 2t)``.

    Point masses interior to ``(0, pi)`` carry weight 1.  A mass at the
    endpoint ``y = pi`` sits on the jump of the indicator of ``[0, pi]`` and
    picks up the average, weight ``pi_weight = 1/2``; the same rule gives the
    leading ``1/2`` from ``y = 0``.
    """
    y = geometric_terms(cone)
    w = np.ones_like(y)
    if y.size and y[-1] == math.pi:
        w[-1] = pi_weight
    a = query.r**2 / (2.0 * query.t)
    return 0.5 + float(np.sum(w * np.exp(-(1.0 - np.cos(y)) * a)))


def cone_bracket(cone: ConeParams, query: HeatQuery, pi_weight: float = 0.5) -> float:
    """``2 pi t`` times the diagonal heat kernel; depends on ``(rho, r^2/t)`` only."""
    return cosine_term(cone, query, pi_weight) - diffraction_integral(cone, query)


def cone_diagonal_heat(cone: ConeParams, query: HeatQuery, pi_weight: float = 0.5) -> float:
    """Diagonal heat kernel ``P(t, (r, theta), (r, theta))`` of the flat cone."""
    return cone_bracket(cone, query, pi_weight) / (2.0 * math.pi * query.t)


def tip_heat(cone: ConeParams, t: float) -> float:
    """Value at the tip, ``1 / (4 pi rho t)``."""
    return 1.0 / (4.0 * math.pi * cone.rho * t)


# ---------------------------------------------------------------------------
# spectral side

def min_admissible_time(basis: SpectralBasis, level: float = TRUNCATION_LEVEL) -> float:
    """Smallest t for which the Weyl tail ``e^{-t L^2}`` beyond the trusted modes is below ``level``."""
    lam = float(basis.trusted_frequencies[-1])
    return math.log(1.0 / level) / lam**2


def spectral_heat(basis: SpectralBasis, t: float, x, y, level: float = TRUNCATION_LEVEL):
    """``sum_j e^{-t lambda_j^2} phi_j(x) phi_j(y)`` over the trusted modes.

    ``x`` and ``y`` are vertex indices (scalars or equal-length arrays).
    """
    if not t > 0:
        raise ValueError("t must be positive")
    t_min = min_admissible_time(basis, level)
    if t < t_min * (1 - 1e-12):
        raise TruncationError(t, t_min)
    n = basis.trusted
    w = np.exp(-t * basis.eigenvalues[:n])
    phi_x = basis.modes[np.atleast_1d(x)][:, :n]
    phi_y = basis.modes[np.atleast_1d(y)][:, :n]
    # multiply the mode values first so swapping x and y is bit-identical
    out = (phi_x * phi_y) @ w
    return float(out[0]) if np.ndim(x) == 0 and np.ndim(y) == 0 else out


def spectral_heat_matrix(basis: SpectralBasis, t: float, points) -> np.ndarray:
    """``P(t, x_a, x_b)`` for all pairs of the given vertices."""
    t_min = min_admissible_time(basis)
    if t < t_min * (1 - 1e-12):
        raise TruncationError(t, t_min)
    n = basis.trusted
    phi = basis.modes[np.asarray(points)][:, :n]
    return (phi * np.exp(-t * basis.eigenvalues[:n])) @ phi.T


# ---------------------------------------------------------------------------
# distances on the doubled surface

def _segment_visible(p, q, rings) -> bool:
    """True if the open segment pq avoids every boundary edge (touching endpoints allowed)."""
    from .geometry import _segments_cross

    for ring in rings:
        n = len(ring)
        for i in range(n):
            a, b = ring[i], ring[(i + 1) % n]
            if _segments_cross(p, q, a, b):
                # grazing contacts at p or q are fine
                if _on_segment(a, b, p) or _on_segment(a, b, q):
                    continue
                return False
    return True


def _on_segment(a, b, c, eps=1e-12) -> bool:
    cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if abs(cross) > eps * max(1.0, math.hypot(b[0] - a[0], b[1] - a[1])):
        return False
    return min(a[0], b[0]) - eps <= c[0] <= max(a[0], b[0]) + eps and min(a[1], b[1]) - eps <= c[1] <= max(a[1], b[1]) + eps


def _reflect(pt, a, b):
    a, b, pt = np.asarray(a), np.asarray(b), np.asarray(pt)
    d = b - a
    s = np.dot(pt - a, d) / np.dot(d, d)
    foot = a + s * d
    return 2 * foot - pt, s


def _unfolded_distance(mesh, poly, i: int, j: int) -> float:
    """Straight or single-reflection geodesic between vertices, or inf if not visible."""
    p = tuple(mesh.vertices[i])
    q = tuple(mesh.vertices[j])
    on_seam = mesh.involution[i] == i or mesh.involution[j] == j
    same_sheet = mesh.sheet[i] == mesh.sheet[j]
    best = math.inf
    if (same_sheet or on_seam) and _segment_visible(p, q, poly.rings):
        best = math.dist(p, q)
    if same_sheet and not on_seam:
        # a single reflection changes sheet
        return best
    pa = np.asarray(p)
    for ring in poly.rings:
        n = len(ring)
        for e in range(n):
            a, b = np.asarray(ring[e]), np.asarray(ring[(e + 1) % n])
            q_ref, _ = _reflect(q, a, b)
            d = q_ref - pa
            ab = b - a
            denom = d[0] * ab[1] - d[1] * ab[0]
            if abs(denom) < 1e-15:
                continue
            ap = a - pa
            s = (ap[0] * ab[1] - ap[1] * ab[0]) / denom
            u = (ap[0] * d[1] - ap[1] * d[0]) / denom
            if not (0 <= s <= 1 and 0 <= u <= 1):
                continue
            z = tuple(pa + s * d)
            if _segment_visible(p, z, poly.rings) and _segment_visible(z, q, poly.rings):
                best = min(best, float(np.linalg.norm(d)))
    return best


def geodesic_distances(mesh, sources, poly=None) -> tuple[np.ndarray, float]:
    """Distances from each source vertex to every other source vertex.

    Uses exact unfolding (straight segments, single reflections across the
    seam) where available and graph shortest paths otherwise.  Returns the
    matrix and the largest observed graph/exact overestimation factor.
    """
    sources = np.asarray(sources)
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    G = sp.csr_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
    graph = dijkstra(G, indices=sources)[:, sources]
    if poly is None:
        return graph, math.nan
    exact = np.array([[_unfolded_distance(mesh, poly, i, j) if i != j else 0.0 for j in sources] for i in sources])
    both = np.isfinite(exact) & (exact > 0)
    factor = float(np.max(graph[both] / exact[both])) if np.any(both) else math.nan
    return np.minimum(graph, exact), factor


def gaussian_bound_check(basis: SpectralBasis, mesh, points, times, b: float, poly=None) -> dict:
    """Smallest ``C`` with ``P(t,x,y) <= C max(1/t, 1) exp(-b d(x,y)^2 / t)`` on the samples."""
    if not b > 0:
        raise ValueError("b must be positive")
    points = np.asarray(points)
    dist, factor = geodesic_distances(mesh, points, poly)
    if not np.all(np.isfinite(dist)):
        raise ValueError("distance unavailable for some sample pairs")
    worst = (math.nan, -1, -1, math.nan)
    c_emp = 0.0
    for t in times:
        P = spectral_heat_matrix(basis, float(t), points)
        bound = max(1.0 / t, 1.0) * np.exp(-b * dist**2 / t)
        ratio = P / bound
        a, c = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[a, c] > c_emp:
            c_emp = float(ratio[a, c])
            worst = (float(t), int(points[a]), int(points[c]), float(dist[a, c]))
    return {"C_emp": c_emp, "b": b, "worst": worst, "overestimation": factor, "pairs": len(points) ** 2}


# ---------------------------------------------------------------------------
# model comparison

CHEEGER_COLUMNS = ("rho", "r", "t", "cone_value", "spectral_value", "abs_dev", "rel_dev")


def _nearest_at_distance(mesh, center, r, sheet=0):
    d = np.linalg.norm(mesh.vertices - np.asarray(center), axis=1)
    candidates = np.flatnonzero(mesh.sheet == sheet)
    return int(candidates[np.argmin(np.abs(d[candidates] - r))]), d


def cheeger_compare(basis: SpectralBasis, mesh, cone: ConeParams, center, radii, times,
                    singular_points=None) -> list[dict]:
    """Spectral diagonal heat kernel against the cone model at points near ``center``.

    For each radius the sheet-0 vertex whose distance to ``center`` is
    closest to ``r`` is used, with its actual distance fed to the model.
    """
    center = np.asarray(center, dtype=float)
    if singular_points is None:
        singular_points = mesh.vertices[mesh.cone_vertex_ids]
    others = [p for p in np.asarray(singular_points) if np.linalg.norm(p - center) > 1e-12]
    reach = min((np.linalg.norm(p - center) for p in others), default=math.inf)
    rows = []
    for r in radii:
        if r >= 0.5 * reach:
            raise ValueError(f"radius {r} outside the isometric neighbourhood (limit {0.5 * reach:g})")
        v, d = _nearest_at_distance(mesh, center, r)
        r_act = float(d[v])
        for t in times:
            model = cone_diagonal_heat(cone, HeatQuery(r_act, float(t)))
            value = spectral_heat(basis, float(t), v, v)
            dev = abs(value - model)
            rows.append({"rho": cone.rho, "r": r_act, "t": float(t), "cone_value": model,
                         "spectral_value": value, "abs_dev": dev, "rel_dev": dev / model})
    return rows
