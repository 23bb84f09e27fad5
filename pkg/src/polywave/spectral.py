"""Eigenbasis of the discrete Laplacian and the functional calculus built on it."""

from __future__ import annotations

import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .geometry import parity_split
from .mesh import DiscreteOperators, SurfaceMesh, assemble
from .quadrature import triangle_rule

log = logging.getLogger(__name__)


def real_matmul(A, B) -> np.ndarray:
    """``A @ B`` for real ``A`` (dense or sparse) and real or complex ``B``.

    Complex ``B`` is multiplied through its interleaved float64 view, so
    ``A`` is never promoted to complex and a single real product is formed.
    """
    B = np.asarray(B)
    vec = B.ndim == 1
    flat = B.reshape(B.shape[0], -1)
    if np.iscomplexobj(B):
        flat = np.ascontiguousarray(flat, dtype=np.complex128)
        out = np.ascontiguousarray(A @ flat.view(np.float64)).view(np.complex128)
    else:
        out = np.asarray(A @ flat)
    return out[:, 0] if vec else out.reshape((out.shape[0],) + B.shape[1:])

BASIS_MAGIC = b"ESCSBASE"
BASIS_VERSION = 1
EVEN, ODD = 1, -1


class SpectralError(RuntimeError):
    pass


@dataclass
class SpectralBasis:
    """Frequencies ``lambda_j`` (ascending) with M-orthonormal vertex modes.

    ``modes[:, j]`` is the eigenfunction ``phi_j`` on every vertex of the
    doubled mesh, ``K phi_j = lambda_j**2 M phi_j``.  Only the first
    ``trusted`` modes are considered discretisation-accurate.
    """

    frequencies: np.ndarray
    modes: np.ndarray
    mass: sp.csr_matrix
    parity: np.ndarray
    trusted: int
    provenance: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.frequencies)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.frequencies**2

    @property
    def trusted_frequencies(self) -> np.ndarray:
        return self.frequencies[: self.trusted]

    def analyze(self, values) -> "SpectralState":
        """Coefficients ``<f, phi_j>`` of a vertex field (or a stack of fields)."""
        values = np.asarray(values)
        return SpectralState(real_matmul(self.modes.T, real_matmul(self.mass, values)), self.tag)

    def synthesize(self, state: "SpectralState") -> np.ndarray:
        return evaluate_on_mesh(self, state)

    def restrict(self, count: int) -> "SpectralBasis":
        return replace(
            self, frequencies=self.frequencies[:count], modes=self.modes[:, :count],
            parity=self.parity[:count], trusted=min(self.trusted, count),
        )

    @property
    def tag(self) -> str:
        return self.provenance.get("tag", "")

    def state(self, coeffs) -> "SpectralState":
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[0] != self.count:
            raise ValueError(f"expected {self.count} coefficients, got {coeffs.shape[0]}")
        return SpectralState(coeffs, self.tag)

    def mode_state(self, j: int, amplitude: complex = 1.0) -> "SpectralState":
        c = np.zeros(self.count, dtype=complex)
        c[j] = amplitude
        return SpectralState(c, self.tag)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        n, m = self.modes.shape
        buf.write(BASIS_MAGIC)
        buf.write(struct.pack("<IIII", BASIS_VERSION, n, m, self.trusted))
        buf.write(np.ascontiguousarray(self.frequencies, dtype="<f8").tobytes())
        buf.write(np.asfortranarray(self.modes, dtype="<f8").tobytes(order="F"))
        buf.write(bytes.fromhex(self.provenance.get("mesh_sha256", "0" * 64)))
        buf.write(np.ascontiguousarray(self.parity, dtype="<i1").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, mass: sp.csr_matrix, provenance: dict | None = None) -> "SpectralBasis":
        if data[:8] != BASIS_MAGIC:
            raise SpectralError("not a basis cache (bad magic)")
        version, n, m, trusted = struct.unpack_from("<IIII", data, 8)
        if version != BASIS_VERSION:
            raise SpectralError(f"unsupported basis cache version {version}")
        off = 24
        freqs = np.frombuffer(data, "<f8", m, off).astype(float)
        off += 8 * m
        modes = np.frombuffer(data, "<f8", n * m, off).reshape((n, m), order="F").astype(float)
        off += 8 * n * m
        digest = data[off: off + 32].hex()
        off += 32
        parity = np.frombuffer(data, "<i1", m, off).astype(np.int8)
        prov = dict(provenance or {})
        prov["mesh_sha256"] = digest
        return cls(freqs, np.ascontiguousarray(modes), mass, parity, trusted, prov)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, mass: sp.csr_matrix, provenance: dict | None = None) -> "SpectralBasis":
        return cls.from_bytes(Path(path).read_bytes(), mass, provenance)


@dataclass
class SpectralState:
    """Coefficients ``c_j = <f, phi_j>``; extra trailing axes hold batches."""

    coeffs: np.ndarray
    basis_ref: str = ""

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)

    def __add__(self, other: "SpectralState") -> "SpectralState":
        return SpectralState(self.coeffs + other.coeffs, self.basis_ref)

    def __sub__(self, other: "SpectralState") -> "SpectralState":
        return SpectralState(self.coeffs - other.coeffs, self.basis_ref)

    def __mul__(self, scalar) -> "SpectralState":
        return SpectralState(self.coeffs * scalar, self.basis_ref)

    __rmul__ = __mul__

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))


def _shift_invert(K, M, sigma):
    for attempt in range(4):
        try:
            lu = splu((K - sigma * M).tocsc())
            return sigma, LinearOperator(K.shape, matvec=lu.solve, dtype=float)
        except RuntimeError:
            log.warning("shifted matrix singular at sigma=%g, perturbing", sigma)
            sigma = sigma * 1.618 - 1e-3 * (attempt + 1)
    raise SpectralError(f"factorization failed near shift {sigma:g}")


def solve_eigenproblem(K, M, count: int, shift: float = -1.0, tol: float = 0.0, maxiter: int | None = None):
    """Lowest ``count`` eigenpairs of ``K v = w M v``, M-orthonormal, ascending.

    Shift-invert Lanczos (ARPACK) about ``shift``, which sits below the
    window so the constant mode of a closed surface is not singular.
    """
    n = K.shape[0]
    if count > n:
        raise ValueError(f"count {count} exceeds dimension {n}")
    if n <= 400 or count >= n - 1:
        w, v = la.eigh(K.toarray(), M.toarray(), subset_by_index=[0, count - 1])
    else:
        sigma, opinv = _shift_invert(K, M, shift)
        ncv = min(n, max(2 * count + 1, count + 32))
        try:
            w, v = eigsh(K, k=count, M=M, sigma=sigma, which="LM", OPinv=opinv, ncv=ncv, tol=tol, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise SpectralError(f"eigensolver did not converge ({len(exc.eigenvalues)} of {count} pairs)") from exc
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    # full M-reorthonormalisation of the Ritz vectors
    G = v.T @ (M @ v)
    G = 0.5 * (G + G.T)
    L = np.linalg.cholesky(G)
    v = la.solve_triangular(L, v.T, lower=True).T
    return np.maximum(w, 0.0), v


def eigenbasis(ops: DiscreteOperators, count: int, shift: float = -1.0, tag: str = "") -> SpectralBasis:
    """Lowest ``count`` modes of the assembled operators, lifted to the full mesh."""
    w, v = solve_eigenproblem(ops.stiffness, ops.mass, count, shift)
    modes = np.asarray(ops.prolong @ v)
    label = {"even": EVEN, "odd": ODD}.get(ops.parity, 0)
    prov = {"bc": "dirichlet_cone" if ops.dirichlet_cone else "friedrichs", "parity": ops.parity or "full", "tag": tag}
    return SpectralBasis(np.sqrt(w), modes, ops.full_mass, np.full(count, label, np.int8), count, prov)


def merge_bases(*bases: SpectralBasis) -> SpectralBasis:
    freqs = np.concatenate([b.frequencies for b in bases])
    order = np.argsort(freqs, kind="stable")
    first = bases[0]
    prov = dict(first.provenance)
    prov["parity"] = "+".join(b.provenance.get("parity", "?") for b in bases)
    return SpectralBasis(
        freqs[order],
        np.concatenate([b.modes for b in bases], axis=1)[:, order],
        first.mass,
        np.concatenate([b.parity for b in bases])[order],
        len(freqs),
        prov,
    )


def doubled_eigenbasis(mesh: SurfaceMesh, count: int, dirichlet_cone: bool = False, tag: str = "") -> SpectralBasis:
    """Lowest ``count`` modes of the doubled surface, solved parity by parity.

    The odd block is the Dirichlet problem on the base polygon and the even
    block the Neumann problem; their union is the spectrum of the double.
    """
    even_ops = assemble(mesh, dirichlet_cone, parity="even")
    odd_ops = assemble(mesh, dirichlet_cone, parity="odd")
    k_even = min(even_ops.size, count // 2 + max(8, count // 10))
    k_odd = min(odd_ops.size, count // 2 + max(8, count // 10))
    while True:
        even = eigenbasis(even_ops, k_even, tag=tag)
        odd = eigenbasis(odd_ops, k_odd, tag=tag)
        merged = merge_bases(even, odd)
        top = merged.frequencies[count - 1] if count <= merged.count else np.inf
        ok_even = k_even == even_ops.size or even.frequencies[-1] >= top
        ok_odd = k_odd == odd_ops.size or odd.frequencies[-1] >= top
        if ok_even and ok_odd:
            break
        if not ok_even:
            k_even = min(even_ops.size, int(k_even * 1.25) + 4)
        if not ok_odd:
            k_odd = min(odd_ops.size, int(k_odd * 1.25) + 4)
    out = merged.restrict(count)
    out.provenance.update(mesh_sha256=mesh.digest(), parity="even+odd", tag=tag)
    return out


def mark_trusted(fine: SpectralBasis, coarse: SpectralBasis, refinement: float = 2.0, tol: float = 0.01) -> SpectralBasis:
    """Trust the longest prefix whose extrapolated frequency error is below ``tol``.

    With second-order convergence the fine-mesh error is estimated as
    ``(lambda_coarse - lambda_fine) / (refinement**2 - 1)``.
    """
    m = min(fine.count, coarse.count)
    est = discretisation_error(fine.frequencies[:m], coarse.frequencies[:m], refinement)
    bad = np.flatnonzero(est >= tol)
    trusted = int(bad[0]) if len(bad) else m
    return replace(fine, trusted=trusted)


def discretisation_error(fine, coarse, refinement: float = 2.0) -> np.ndarray:
    """Extrapolated frequency error, relative for ``lambda >= 1`` and absolute below.

    The constant mode has ``lambda = 0`` on both meshes up to solver noise,
    which a purely relative measure would blow up.
    """
    fine = np.asarray(fine, dtype=float)
    diff = np.abs(np.asarray(coarse, dtype=float) - fine) / (refinement**2 - 1.0)
    return diff / np.maximum(fine, 1.0)


def apply_multiplier(basis: SpectralBasis, F, state: SpectralState) -> SpectralState:
    """``F(sqrt(Delta))``: scale each coefficient by ``F(lambda_j)``."""
    scale = np.asarray(F(basis.frequencies), dtype=float)
    c = state.coeffs
    return SpectralState(scale.reshape((-1,) + (1,) * (c.ndim - 1)) * c, state.basis_ref)


def sobolev_norm(basis: SpectralBasis, state: SpectralState, s: float) -> float:
    weight = (1.0 + basis.frequencies**2) ** s
    return float(np.sqrt(np.sum(weight * np.abs(state.coeffs) ** 2)))


def evaluate_on_mesh(basis: SpectralBasis, state: SpectralState) -> np.ndarray:
    """Synthesis ``sum_j c_j phi_j`` at every mesh vertex."""
    return real_matmul(basis.modes, state.coeffs)


def parity_split_state(basis: SpectralBasis, mesh: SurfaceMesh, state: SpectralState, parity: str) -> SpectralState:
    return basis.analyze(parity_split(evaluate_on_mesh(basis, state), mesh, parity))


def classify_parity(basis: SpectralBasis, mesh: SurfaceMesh) -> np.ndarray:
    """+1 for sigma-even modes, -1 for sigma-odd, by comparing the M-norms of the parts."""
    M = basis.mass
    even = parity_split(basis.modes, mesh, "even")
    odd = parity_split(basis.modes, mesh, "odd")
    ne = np.einsum("ij,ij->j", even, M @ even)
    no = np.einsum("ij,ij->j", odd, M @ odd)
    return np.where(ne >= no, EVEN, ODD).astype(np.int8)


class LqIntegrator:
    """``L^q`` norms of P1 fields by degree-4 triangle quadrature."""

    def __init__(self, mesh: SurfaceMesh):
        self.Q, self.weights = triangle_rule(mesh.triangles, mesh.triangle_areas(), mesh.n_vertices)

    def power_integral(self, field, q: float) -> np.ndarray:
        """``int |field|**q`` for a field or a column stack of fields."""
        field = np.asarray(field)
        if np.iscomplexobj(field):
            flat = np.ascontiguousarray(field.reshape(field.shape[0], -1), dtype=np.complex128)
            sq = self.Q @ flat.view(np.float64)
            sq *= sq
            mag2 = sq[:, 0::2] + sq[:, 1::2]
            if field.ndim == 1:
                mag2 = mag2[:, 0]
        else:
            mag2 = self.Q @ field
            mag2 *= mag2
        if q == 4:
            mag2 *= mag2
        elif q != 2:
            np.power(mag2, q / 2.0, out=mag2)
        return self.weights @ mag2

    def norm(self, field, q: float):
        field = np.asarray(field)
        if np.isinf(q):
            return np.max(np.abs(field), axis=0)
        if q < 1:
            raise ValueError("q must be >= 1")
        return self.power_integral(field, q) ** (1.0 / q)


_INTEGRATORS: dict[int, LqIntegrator] = {}


def integrator(mesh: SurfaceMesh) -> LqIntegrator:
    key = id(mesh)
    cached = _INTEGRATORS.get(key)
    if cached is None or cached.Q.shape[1] != mesh.n_vertices:
        cached = _INTEGRATORS[key] = LqIntegrator(mesh)
    return cached


def lq_norm(mesh: SurfaceMesh, field, q: float):
    """``(int |field|^q dA)^(1/q)``; ``q = inf`` gives the max vertex magnitude."""
    out = integrator(mesh).norm(field, q)
    return float(out) if np.ndim(out) == 0 else out


def weyl_count(area: float, lam) -> np.ndarray:
    """Leading Weyl term ``area * lambda**2 / (4 pi)``."""
    return area * np.asarray(lam, dtype=float) ** 2 / (4.0 * np.pi)


def relative_residuals(ops: DiscreteOperators, basis: SpectralBasis) -> np.ndarray:
    """``|K v - lambda^2 M v| / |K v|`` on the reduced space (via least squares lift)."""
    P = ops.prolong
    v = sp.linalg.spsolve((P.T @ P).tocsc(), P.T @ basis.modes) if P.shape[0] != P.shape[1] else basis.modes
    v = np.asarray(v).reshape(P.shape[1], -1)
    Kv = ops.stiffness @ v
    r = Kv - (ops.mass @ v) * basis.eigenvalues[None, :]
    scale = np.maximum(np.linalg.norm(Kv, axis=0), np.linalg.norm(ops.mass @ v, axis=0))
    return np.linalg.norm(r, axis=0) / scale


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
