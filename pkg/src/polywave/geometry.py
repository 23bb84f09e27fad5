"""Polygons, their doubles, and cone-point structure.

A polygon ``Omega`` with interior angle ``alpha`` at a vertex doubles to a
closed flat surface with a cone point of radius ``rho = alpha / pi`` there.
The double is kept abstract: the base polygon plus the mirror involution that
swaps the two sheets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Point = tuple[float, float]


class PolygonError(ValueError):
    """Invalid polygon input.  ``vertex`` is the offending vertex index, if any."""

    def __init__(self, message: str, vertex: int | None = None, ring: str | None = None):
        where = []
        if ring is not None:
            where.append(ring)
        if vertex is not None:
            where.append(f"vertex {vertex}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.vertex = vertex
        self.ring = ring


@dataclass(frozen=True)
class PolygonSpec:
    outer: tuple[Point, ...]
    holes: tuple[tuple[Point, ...], ...] = ()
    name: str = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "outer", tuple((float(x), float(y)) for x, y in self.outer))
        object.__setattr__(
            self, "holes", tuple(tuple((float(x), float(y)) for x, y in h) for h in self.holes)
        )
        validate_polygon(self)

    @property
    def rings(self) -> tuple[tuple[Point, ...], ...]:
        return (self.outer, *self.holes)

    @property
    def vertices(self) -> np.ndarray:
        """All vertices, outer ring first then holes in order."""
        return np.array([p for ring in self.rings for p in ring], dtype=float)

    @property
    def area(self) -> float:
        return signed_area(self.outer) + sum(signed_area(h) for h in self.holes)

    @property
    def diameter(self) -> float:
        v = np.array(self.outer)
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))


@dataclass(frozen=True)
class ConePoint:
    location: Point
    alpha: float
    rho: float

    @property
    def cone_angle(self) -> float:
        return 2.0 * self.alpha


@dataclass(frozen=True)
class SurfaceSpec:
    base: PolygonSpec
    cone_points: tuple[ConePoint, ...]
    total_area: float

    @property
    def euler_characteristic(self) -> int:
        return 2 - 2 * len(self.base.holes)

    def gauss_bonnet_defect(self) -> float:
        """Sum of angle defects ``2*pi - cone angle``; equals ``2*pi*chi``."""
        return math.fsum(2.0 * math.pi - c.cone_angle for c in self.cone_points)

    @property
    def rho_max(self) -> float:
        return max(c.rho for c in self.cone_points)


def signed_area(ring: Sequence[Point]) -> float:
    """Shoelace area; positive for counterclockwise rings."""
    v = np.asarray(ring, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * math.fsum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def ring_angles(ring: Sequence[Point]) -> np.ndarray:
    """Interior angles of the domain at each vertex of ``ring``.

    The domain lies to the left of the traversal direction (counterclockwise
    outer ring, clockwise holes), so the interior angle is ``pi`` minus the
    signed turning angle.
    """
    v = np.asarray(ring, dtype=float)
    d_in = v - np.roll(v, 1, axis=0)
    d_out = np.roll(v, -1, axis=0) - v
    cross = d_in[:, 0] * d_out[:, 1] - d_in[:, 1] * d_out[:, 0]
    dot = np.einsum("ij,ij->i", d_in, d_out)
    return math.pi - np.arctan2(cross, dot)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if (o1 > 0) != (o2 > 0) and (o3 > 0) != (o4 > 0) and o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
        return True
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


def _first_crossing(ring_a, ring_b=None) -> int | None:
    """Index (into ring_a) of the first edge that crosses another edge."""
    same = ring_b is None
    ring_b = ring_a if same else ring_b
    na, nb = len(ring_a), len(ring_b)
    for i in range(na):
        p1, p2 = ring_a[i], ring_a[(i + 1) % na]
        for j in range(nb):
            if same:
                # adjacent edges share a vertex by construction
                if j == i or j == (i + 1) % na or (j + 1) % nb == i:
                    continue
            if _segments_cross(p1, p2, ring_b[j], ring_b[(j + 1) % nb]):
                return i
    return None


def point_in_ring(pt: Point, ring: Sequence[Point]) -> bool:
    x, y = pt
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def validate_polygon(poly: PolygonSpec) -> None:
    names = ["outer"] + [f"hole {i}" for i in range(len(poly.holes))]
    for ring, label in zip(poly.rings, names):
        if len(ring) < 3:
            raise PolygonError("ring needs at least 3 vertices", ring=label)
        for i in range(len(ring)):
            if ring[i] == ring[(i + 1) % len(ring)]:
                raise PolygonError("consecutive vertices coincide", vertex=i, ring=label)
        area = signed_area(ring)
        if label == "outer" and area <= 0:
            raise PolygonError("outer ring must be counterclockwise", ring=label)
        if label != "outer" and area >= 0:
            raise PolygonError("hole ring must be clockwise", ring=label)
        bad = _first_crossing(ring)
        if bad is not None:
            raise PolygonError("boundary self-intersects", vertex=bad, ring=label)
        angles = ring_angles(ring)
        for i, a in enumerate(angles):
            if a <= 1e-12 or a >= 2.0 * math.pi - 1e-12:
                raise PolygonError("degenerate vertex angle", vertex=i, ring=label)
    for k, hole in enumerate(poly.holes):
        label = f"hole {k}"
        for i, p in enumerate(hole):
            if not point_in_ring(p, poly.outer):
                raise PolygonError("hole outside outer boundary", vertex=i, ring=label)
        bad = _first_crossing(hole, poly.outer)
        if bad is not None:
            raise PolygonError("hole touches outer boundary", vertex=bad, ring=label)
        for m in range(k + 1, len(poly.holes)):
            other = poly.holes[m]
            bad = _first_crossing(hole, other)
            if bad is not None or point_in_ring(hole[0], other) or point_in_ring(other[0], hole):
                raise PolygonError(f"holes {k} and {m} overlap", vertex=bad, ring=label)


def parse_polygon(text: str) -> PolygonSpec:
    """Parse the line-oriented polygon format.

    ::

        name unit-square
        outer 4
        0 0
        1 0
        1 1
        0 1
        hole 3      # optional, repeatable, clockwise
        ...
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line))
    name = "polygon"
    rings: list[list[Point]] = []
    kinds: list[str] = []
    pos = 0

    def read_points(count, lineno, kind):
        nonlocal pos
        pts = []
        for i in range(count):
            if pos >= len(lines):
                raise PolygonError(f"line {lineno}: {kind} expects {count} points, got {i}", vertex=i)
            ln, line = lines[pos]
            parts = line.split()
            if len(parts) != 2:
                raise PolygonError(f"line {ln}: expected 'x y'", vertex=i, ring=kind)
            try:
                pts.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise PolygonError(f"line {ln}: bad coordinate", vertex=i, ring=kind) from None
            pos += 1
        return pts

    while pos < len(lines):
        lineno, line = lines[pos]
        pos += 1
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "name":
            name = rest or name
        elif key in ("outer", "hole"):
            try:
                count = int(rest)
            except ValueError:
                raise PolygonError(f"line {lineno}: '{key}' needs a vertex count") from None
            if key == "outer" and rings:
                raise PolygonError(f"line {lineno}: duplicate outer ring")
            if key == "hole" and not rings:
                raise PolygonError(f"line {lineno}: hole before outer ring")
            rings.append(read_points(count, lineno, key))
            kinds.append(key)
        else:
            raise PolygonError(f"line {lineno}: unknown keyword {key!r}")
    if not rings:
        raise PolygonError("no outer ring")
    return PolygonSpec(outer=tuple(rings[0]), holes=tuple(tuple(r) for r in rings[1:]), name=name)


def format_polygon(poly: PolygonSpec) -> str:
    out = [f"name {poly.name}", f"outer {len(poly.outer)}"]
    out += [f"{x!r} {y!r}" for x, y in poly.outer]
    for hole in poly.holes:
        out.append(f"hole {len(hole)}")
        out += [f"{x!r} {y!r}" for x, y in hole]
    return "\n".join(out) + "\n"


def double(poly: PolygonSpec) -> SurfaceSpec:
    """Glue ``poly`` to its mirror image along the boundary."""
    cones = []
    for ring in poly.rings:
        for p, alpha in zip(ring, ring_angles(ring)):
            alpha = float(alpha)
            cones.append(ConePoint(location=p, alpha=alpha, rho=alpha / math.pi))
    return SurfaceSpec(base=poly, cone_points=tuple(cones), total_area=2.0 * poly.area)


def parity_split(values, mesh, parity: str):
    """Odd (Dirichlet-type) or even (Neumann-type) part of a vertex field.

    ``values`` has the mesh vertices on its first axis.  Returns
    ``(u - u o sigma) / 2`` for ``parity="odd"`` and ``(u + u o sigma) / 2``
    for ``"even"``.
    """
    invol = getattr(mesh, "involution", None)
    if invol is None:
        raise ValueError("mesh carries no involution")
    u = np.asarray(values)
    mirrored = u[invol]
    if parity == "even":
        return 0.5 * (u + mirrored)
    if parity == "odd":
        return 0.5 * (u - mirrored)
    raise ValueError(f"parity must be 'odd' or 'even', got {parity!r}")


def unit_square(side: float = 1.0) -> PolygonSpec:
    s = float(side)
    return PolygonSpec(outer=((0.0, 0.0), (s, 0.0), (s, s), (0.0, s)), name="square" if s != 1 else "unit-square")
