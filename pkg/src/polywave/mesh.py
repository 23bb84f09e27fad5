"""Graded triangulation of the doubled surface and P1 finite-element operators."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import triangle

from .geometry import SurfaceSpec, ring_angles

MESH_MAGIC = b"ESCSMESH"
MESH_VERSION = 1


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeshParams:
    """``grade=None`` picks ``clamp(1/rho, 1/2, 1)`` per re-entrant cone point."""

    h: float
    grade: float | None = None
    min_angle: float = 28.0
    max_vertices: int = 400_000

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.grade is not None and not 0 < self.grade <= 1:
            raise ValueError("grade must lie in (0, 1]")
        if not 10 <= self.min_angle <= 30:
            raise ValueError("min_angle must lie in [10, 30] degrees")


@dataclass
class SurfaceMesh:
    vertices: np.ndarray          # (n, 2) chart coordinates, shared by both sheets
    sheet: np.ndarray             # (n,) 0 or 1; seam vertices carry 0
    triangles: np.ndarray         # (m, 3)
    involution: np.ndarray | None
    cone_vertex_ids: np.ndarray
    boundary_edge_ids: np.ndarray  # (k, 2) seam edges
    cone_rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = "surface"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_base(self) -> int:
        return int(np.count_nonzero(self.sheet == 0))

    @property
    def seam_vertex_ids(self) -> np.ndarray:
        return np.flatnonzero(self.involution == np.arange(self.n_vertices))

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def triangle_angles(self) -> np.ndarray:
        """Interior angles in degrees, shape (m, 3)."""
        p = self.vertices[self.triangles]
        out = np.empty((len(p), 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cross = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
            out[:, i] = np.degrees(np.arctan2(cross, np.einsum("ij,ij->i", a, b)))
        return out

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def to_bytes(self) -> bytes:
        if self.involution is None:
            raise MeshError("cannot serialise a mesh without involution")
        buf = io.BytesIO()
        buf.write(MESH_MAGIC)
        buf.write(struct.pack("<IIII", MESH_VERSION, self.n_vertices, len(self.triangles), len(self.cone_vertex_ids)))
        buf.write(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(self.triangles, dtype="<u4").tobytes())
        buf.write(np.ascontiguousarray(self.involution, dtype="<u4").tobytes())
        buf.write(np.ascontiguousarray(self.cone_vertex_ids, dtype="<u4").tobytes())
        buf.write(np.ascontiguousarray(self.cone_rho, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, name: str = "surface") -> "SurfaceMesh":
        if data[:8] != MESH_MAGIC:
            raise MeshError("not a mesh cache (bad magic)")
        version, nv, nt, nc = struct.unpack_from("<IIII", data, 8)
        if version != MESH_VERSION:
            raise MeshError(f"unsupported mesh cache version {version}")
        off = 8 + 16

        def take(dtype, count, shape=None):
            nonlocal off
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr.reshape(shape) if shape else arr

        verts = take("<f8", 2 * nv, (nv, 2)).astype(float)
        tris = take("<u4", 3 * nt, (nt, 3)).astype(np.int64)
        invol = take("<u4", nv).astype(np.int64)
        cones = take("<u4", nc).astype(np.int64)
        rho = take("<f8", nc).astype(float) if off < len(data) else np.full(nc, np.nan)
        idx = np.arange(nv)
        sheet = (invol < idx).astype(np.int8)
        return cls(
            vertices=verts, sheet=sheet, triangles=tris, involution=invol, cone_vertex_ids=cones,
            boundary_edge_ids=_seam_edges(tris, invol), cone_rho=rho, name=name,
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SurfaceMesh":
        return cls.from_bytes(Path(path).read_bytes(), name=Path(path).stem)


@dataclass
class DiscreteOperators:
    """Stiffness and mass on a reduced coordinate space.

    ``prolong`` maps reduced coefficient vectors to vertex fields on the full
    doubled mesh; it absorbs parity restriction and Dirichlet elimination.
    """

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    dirichlet_cone: bool
    prolong: sp.csr_matrix
    parity: str | None = None
    full_mass: sp.csr_matrix | None = None

    @property
    def size(self) -> int:
        return self.stiffness.shape[0]


def _seam_edges(tris: np.ndarray, invol: np.ndarray) -> np.ndarray:
    # triangles are stored sheet 0 first; seam edges bound exactly one of them
    base = tris[: len(tris) // 2]
    e = np.sort(np.concatenate([base[:, [0, 1]], base[:, [1, 2]], base[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


def _interior_point(ring) -> tuple[float, float]:
    ring = np.asarray(ring, dtype=float)
    n = len(ring)
    t = triangle.triangulate({"vertices": ring, "segments": np.c_[np.arange(n), (np.arange(n) + 1) % n]}, "p")
    tri = t["vertices"][t["triangles"][0]]
    return tuple(tri.mean(axis=0))


def _target_size(points, h, cones, diam):
    size = np.full(len(points), h)
    for loc, g in cones:
        if g >= 1:
            continue
        r = np.linalg.norm(points - np.asarray(loc), axis=1)
        r_floor = diam * (h / diam) ** (1.0 / g)
        local = h * (np.maximum(r, r_floor) / diam) ** (1.0 - g)
        size = np.minimum(size, local)
    return size


def triangulate(spec: SurfaceSpec, params: MeshParams) -> SurfaceMesh:
    """Quality triangulation of the base polygon, mirrored onto the second sheet.

    Near a re-entrant cone point the target edge length is
    ``h * (r / diam) ** (1 - grade)``.
    """
    poly = spec.base
    verts = poly.vertices
    segs, start = [], 0
    for ring in poly.rings:
        n = len(ring)
        segs.append(np.c_[start + np.arange(n), start + (np.arange(n) + 1) % n])
        start += n
    pslg = {"vertices": verts, "segments": np.concatenate(segs)}
    if poly.holes:
        pslg["holes"] = np.array([_interior_point(h) for h in poly.holes])

    diam = poly.diameter
    graded = []
    for c in spec.cone_points:
        if c.rho > 1:
            g = params.grade if params.grade is not None else min(1.0, max(0.5, 1.0 / c.rho))
            graded.append((c.location, g))
    area_of = lambda size: math.sqrt(3) / 4 * size**2  # noqa: E731
    opts = f"pq{params.min_angle:g}a{area_of(params.h):.15f}"
    base = triangle.triangulate(pslg, opts)
    for _ in range(60):
        if len(base["vertices"]) > params.max_vertices // 2:
            raise MeshError(
                f"mesh exceeds vertex budget ({2 * len(base['vertices'])} > {params.max_vertices})"
            )
        if not graded:
            break
        p = base["vertices"][base["triangles"]]
        centroid = p.mean(axis=1)
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        target = area_of(_target_size(centroid, params.h, graded, diam))
        if np.all(area <= 1.05 * target):
            break
        base["triangle_max_area"] = np.where(area > target, target, -1.0)[:, None]
        base = triangle.triangulate(
            {k: base[k] for k in ("vertices", "triangles", "segments", "triangle_max_area", *(["holes"] if "holes" in base else []))},
            f"rpq{params.min_angle:g}a",
        )
    bv = np.asarray(base["vertices"], dtype=float)
    bt = np.asarray(base["triangles"], dtype=np.int64)
    if not np.allclose(bv[: len(verts)], verts):
        raise MeshError("triangulator reordered the polygon vertices")
    mesh = _double_mesh(bv, bt, np.arange(len(verts)), spec, poly.name)
    angles = mesh.triangle_angles()
    worst = int(np.argmin(angles.min(axis=1)))
    if angles[worst].min() < params.min_angle - 1e-9:
        raise MeshError(
            f"minimum angle {angles[worst].min():.3f} deg below {params.min_angle} "
            f"(triangle {worst}: {mesh.vertices[mesh.triangles[worst]].tolist()})"
        )
    return mesh


def _double_mesh(bv, bt, cone_ids, spec: SurfaceSpec | None, name: str) -> SurfaceMesh:
    # orient every base triangle positively
    p = bv[bt]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    bt = bt.copy()
    bt[neg] = bt[neg][:, [0, 2, 1]]
    nb = len(bv)
    e = np.concatenate([bt[:, [0, 1]], bt[:, [1, 2]], bt[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    boundary_edges = uniq[counts == 1]
    on_seam = np.zeros(nb, dtype=bool)
    on_seam[boundary_edges.ravel()] = True
    interior = np.flatnonzero(~on_seam)
    copy_of = np.arange(nb)
    copy_of[interior] = nb + np.arange(len(interior))
    vertices = np.concatenate([bv, bv[interior]])
    sheet = np.concatenate([np.zeros(nb, np.int8), np.ones(len(interior), np.int8)])
    involution = np.concatenate([copy_of, interior])
    triangles = np.concatenate([bt, copy_of[bt]])
    rho = np.array([c.rho for c in spec.cone_points]) if spec is not None else np.full(len(cone_ids), np.nan)
    return SurfaceMesh(
        vertices=vertices, sheet=sheet, triangles=triangles, involution=involution,
        cone_vertex_ids=np.asarray(cone_ids, dtype=np.int64), boundary_edge_ids=boundary_edges,
        cone_rho=rho, name=name,
    )


def element_matrices(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P1 stiffness and consistent mass for triangles ``points`` of shape (m, 3, 2)."""
    e1, e2 = points[:, 1] - points[:, 0], points[:, 2] - points[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    # edge opposite each vertex; its rotation is proportional to the basis gradient
    d = np.stack([points[:, 2] - points[:, 1], points[:, 0] - points[:, 2], points[:, 1] - points[:, 0]], axis=1)
    ke = np.einsum("tid,tjd->tij", d, d) / (4.0 * area[:, None, None])
    me = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    return ke, me


def _assemble_full(mesh: SurfaceMesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    areas = mesh.triangle_areas()
    bad = np.flatnonzero(areas <= 0)
    if len(bad):
        raise MeshError(f"degenerate or inverted triangle {int(bad[0])}")
    ke, me = element_matrices(mesh.vertices[mesh.triangles])
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    # a + b == b + a in IEEE arithmetic, so this is bitwise symmetric
    K = ((K + K.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    K.sort_indices()
    M.sort_indices()
    return K, M


def parity_prolongation(mesh: SurfaceMesh, parity: str | None, exclude=()) -> sp.csr_matrix:
    """Columns spanning the even or odd vertex fields (or all fields for ``None``)."""
    n = mesh.n_vertices
    excluded = np.zeros(n, dtype=bool)
    excluded[np.asarray(exclude, dtype=np.int64)] = True
    if parity is None:
        keep = np.flatnonzero(~excluded)
        return sp.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))), shape=(n, len(keep)))
    if mesh.involution is None:
        raise MeshError("parity restriction needs the involution")
    invol = mesh.involution
    base = np.flatnonzero((mesh.sheet == 0) & ~excluded)
    fixed = invol[base] == base
    if parity == "even":
        cols = np.arange(len(base))
        pair = base[~fixed]
        rows = np.concatenate([base, invol[pair]])
        cc = np.concatenate([cols, cols[~fixed]])
        vals = np.ones(len(rows))
    elif parity == "odd":
        pair = base[~fixed]
        cols = np.arange(len(pair))
        rows = np.concatenate([pair, invol[pair]])
        cc = np.concatenate([cols, cols])
        vals = np.concatenate([np.ones(len(pair)), -np.ones(len(pair))])
        base = pair
    else:
        raise ValueError(f"parity must be 'even', 'odd' or None, got {parity!r}")
    return sp.csr_matrix((vals, (rows, cc)), shape=(n, len(base)))


def assemble(mesh: SurfaceMesh, dirichlet_cone: bool = False, parity: str | None = None) -> DiscreteOperators:
    """Assemble stiffness ``K`` and mass ``M`` on the doubled surface.

    With ``dirichlet_cone`` the cone vertices are eliminated.  With ``parity``
    the operators are restricted to sigma-even or sigma-odd fields, which is
    equivalent to the Neumann or Dirichlet problem on the base polygon.
    """
    K, M = _assemble_full(mesh)
    exclude = mesh.cone_vertex_ids if dirichlet_cone else ()
    P = parity_prolongation(mesh, parity, exclude)
    if parity is None and not dirichlet_cone:
        Kr, Mr = K, M
    else:
        PT = P.T.tocsr()
        Kr = (PT @ K @ P).tocsr()
        Mr = (PT @ M @ P).tocsr()
        Kr = ((Kr + Kr.T) * 0.5).tocsr()
        Mr = ((Mr + Mr.T) * 0.5).tocsr()
    return DiscreteOperators(stiffness=Kr, mass=Mr, dirichlet_cone=dirichlet_cone, prolong=P, parity=parity, full_mass=M)


MESH_STATS_COLUMNS = ("surface", "n_vertices", "n_triangles", "min_angle_deg", "min_edge", "max_edge", "total_area")


def mesh_stats(mesh: SurfaceMesh) -> dict:
    lengths = mesh.edge_lengths()
    return {
        "surface": mesh.name,
        "n_vertices": mesh.n_vertices,
        "n_triangles": len(mesh.triangles),
        "min_angle_deg": float(mesh.triangle_angles().min()),
        "min_edge": float(lengths.min()),
        "max_edge": float(lengths.max()),
        "total_area": float(mesh.triangle_areas().sum()),
    }


def write_mesh_stats(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# schema mesh_stats v1\n")
        w = csv.DictWriter(fh, fieldnames=MESH_STATS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
