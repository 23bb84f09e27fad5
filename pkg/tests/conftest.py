"""Shared meshes and eigenbases.

Large bases are cached on disk under ``tests/.cache`` (override with
``POLYWAVE_TEST_CACHE``) so repeated runs skip the eigen-solves.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest
from filelock import FileLock

from polywave.geometry import double, unit_square
from polywave.mesh import MeshParams, SurfaceMesh, assemble, triangulate
from polywave.spectral import SpectralBasis, doubled_eigenbasis, mark_trusted

CACHE = Path(os.environ.get("POLYWAVE_TEST_CACHE", Path(__file__).parent / ".cache"))

# side, fine h, coarse h (trust check), mode count
SURFACES = {
    "square": (1.0, 0.02, 0.04, 120),
    "square12": (1.2, 0.01, 0.02, 950),
}


def square_mesh(side: float, h: float) -> SurfaceMesh:
    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / f"square_{side:g}_{h:g}.mesh"
    with FileLock(str(path) + ".lock"):
        if path.exists():
            return SurfaceMesh.load(path)
        mesh = triangulate(double(unit_square(side)), MeshParams(h))
        mesh.save(path)
        return mesh


def square_basis(name: str) -> tuple[SurfaceMesh, SpectralBasis]:
    side, h, h_coarse, count = SURFACES[name]
    mesh = square_mesh(side, h)
    path = CACHE / f"{name}_{count}.basis"
    mass = assemble(mesh).full_mass
    with FileLock(str(path) + ".lock"):
        if path.exists():
            return mesh, SpectralBasis.load(path, mass)
        fine = doubled_eigenbasis(mesh, count)
        coarse = doubled_eigenbasis(square_mesh(side, h_coarse), count)
        basis = mark_trusted(fine, coarse)
        basis.save(path)
        return mesh, basis


@pytest.fixture(scope="session")
def square():
    """Doubled unit square, h = 0.02, 120 modes."""
    return square_basis("square")


@pytest.fixture(scope="session")
def square12():
    """Doubled square of side 1.2, h = 0.01, 950 modes (trusted to about lambda = 64)."""
    return square_basis("square12")


# acceptance report -----------------------------------------------------------

_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
