"""Batch runner: ``polywave <command> [options]``.

Options come from flags or from a ``key=value`` file given with
``--config``; flags win.  Meshes and bases are cached under
``$POLYWAVE_CACHE`` (default ``~/.cache/polywave``) keyed by a hash of
everything that determines them.  Every run writes ``manifest.json`` to the
output directory, also when it fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from .geometry import PolygonError, double, format_polygon, parse_polygon
from .mesh import MeshParams, SurfaceMesh, assemble, mesh_stats, triangulate
from .spectral import SpectralBasis, doubled_eigenbasis, eigenbasis, mark_trusted

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# output

class RunOutput:
    def __init__(self, directory: Path, command: str, config: dict):
        self.dir = directory
        self.command = command
        self.config = config
        self.files: list[dict] = []

    def write_csv(self, name: str, schema: str, columns, rows) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema {schema} v{SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in columns])
        self.files.append({"path": name, "schema": schema, "version": SCHEMA_VERSION, "rows": len(rows)})
        return path

    def write_manifest(self, status: int, error: str | None) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "command": self.command,
            "config": self.config,
            "files": self.files,
            "partial": status != EXIT_OK,
            "status": status,
            "error": error,
            "version": __version__,
        }
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


# ---------------------------------------------------------------------------
# cache

def cache_dir() -> Path:
    return Path(os.environ.get("POLYWAVE_CACHE") or Path.home() / ".cache" / "polywave")


def _key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


def _mesh_payload(cfg: dict, h: float) -> dict:
    return {"polygon": cfg["polygon_text"], "h": h, "grade": cfg["grade"], "min_angle": cfg["min_angle"],
            "kind": "mesh", "v": SCHEMA_VERSION}


def cached_mesh(cfg: dict, h: float | None = None) -> SurfaceMesh:
    h = cfg["h"] if h is None else h
    root = cache_dir()
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{_key(_mesh_payload(cfg, h))}.mesh"
    with FileLock(str(path) + ".lock"):
        if path.exists():
            return SurfaceMesh.load(path)
        mesh = triangulate(cfg["surface"], MeshParams(h, grade=cfg["grade"], min_angle=cfg["min_angle"]))
        mesh.save(path)
        return mesh


def _solve(mesh: SurfaceMesh, count: int, bc: str) -> SpectralBasis:
    if bc == "both":
        return doubled_eigenbasis(mesh, count)
    parity = "odd" if bc == "dirichlet" else "even"
    ops = assemble(mesh, parity=parity)
    if count >= ops.size:
        raise ConfigError(f"modes={count} exceeds the {ops.size} degrees of freedom of the {bc} block")
    return eigenbasis(ops, count)


def cached_basis(cfg: dict) -> tuple[SurfaceMesh, SpectralBasis]:
    mesh = cached_mesh(cfg)
    payload = dict(_mesh_payload(cfg, cfg["h"]), kind="basis", modes=cfg["modes"], bc=cfg["bc"],
                   trust=cfg["trust"])
    path = cache_dir() / f"{_key(payload)}.basis"
    full_mass = assemble(mesh).full_mass
    with FileLock(str(path) + ".lock"):
        if path.exists():
            return mesh, SpectralBasis.load(path, full_mass)
        basis = _solve(mesh, cfg["modes"], cfg["bc"])
        if cfg["trust"]:
            coarse = _solve(cached_mesh(cfg, 2.0 * cfg["h"]), cfg["modes"], cfg["bc"])
            basis = mark_trusted(basis, coarse)
        basis.save(path)
        return mesh, basis


# ---------------------------------------------------------------------------
# commands

def cmd_double(cfg, out: RunOutput):
    """Cone points of the doubled surface."""
    surf = cfg["surface"]
    rows = [{"index": i, "x": c.location[0], "y": c.location[1], "alpha": c.alpha, "rho": c.rho}
            for i, c in enumerate(surf.cone_points)]
    out.write_csv("cone_points.csv", "cone_points", ("index", "x", "y", "alpha", "rho"), rows)


def cmd_mesh(cfg, out: RunOutput):
    """Triangulate the doubled surface and write mesh statistics."""
    stats = mesh_stats(cached_mesh(cfg))
    out.write_csv("mesh_stats.csv", "mesh_stats", tuple(stats), [stats])


def cmd_eigs(cfg, out: RunOutput):
    """Eigenbasis (cached) and eigenvalue table."""
    _, basis = cached_basis(cfg)
    rows = [{"index": j, "frequency": basis.frequencies[j], "eigenvalue": basis.eigenvalues[j],
             "parity": int(basis.parity[j]), "trusted": int(j < basis.trusted)} for j in range(basis.count)]
    out.write_csv("eigenvalues.csv", "eigenvalues", ("index", "frequency", "eigenvalue", "parity", "trusted"), rows)


def _state_modes(basis, cfg) -> int:
    """Number of leading trusted modes carrying random data."""
    if cfg["cutoff"] is not None:
        return int(np.searchsorted(basis.trusted_frequencies, cfg["cutoff"], side="right"))
    return min(cfg["state_modes"], basis.trusted)


def _random_states(basis, samples: int, seed: int, n: int):
    if n < 1:
        raise ConfigError("no trusted modes below the requested cutoff")
    rng = np.random.default_rng(seed)
    c = np.zeros((basis.count, samples), dtype=complex)
    c[:n] = (rng.standard_normal((n, samples)) + 1j * rng.standard_normal((n, samples))) / math.sqrt(2.0)
    return basis.state(c)


def cmd_squarefn(cfg, out: RunOutput):
    """Squarefunction ratios for random states."""
    from .littlewood_paley import squarefunction

    mesh, basis = cached_basis(cfg)
    n = _state_modes(basis, cfg)
    states = _random_states(basis, cfg["samples"], cfg["seed"], n)
    cut = cfg["cutoff"] if cfg["cutoff"] is not None else float(basis.frequencies[n - 1])
    rows = []
    for q in cfg["q_list"]:
        for s in range(cfg["samples"]):
            _, ratio = squarefunction(basis, mesh, basis.state(states.coeffs[:, s]), q)
            rows.append({"surface": cfg["surface_name"], "q": q, "cutoff": cut, "sample_id": s, "ratio": ratio})
    out.write_csv("squarefunction.csv", "squarefunction", ("surface", "q", "cutoff", "sample_id", "ratio"), rows)


def cmd_evolve(cfg, out: RunOutput):
    """Mass and L^q norm of a random state along the flow."""
    from .evolution import propagate
    from .spectral import evaluate_on_mesh, lq_norm

    mesh, basis = cached_basis(cfg)
    f = _random_states(basis, 1, cfg["seed"], _state_modes(basis, cfg))
    f = basis.state(f.coeffs[:, 0])
    rows = []
    for t in cfg["times"]:
        u = propagate(basis, f, t)
        rows.append({"t": t, "mass": u.l2_norm(), "lq_norm": lq_norm(mesh, evaluate_on_mesh(basis, u), cfg["q"])})
    out.write_csv("evolution.csv", "evolution", ("t", "mass", "lq_norm"), rows)


STRICHARTZ_COLUMNS = ("surface", "bc", "p", "q", "k", "T", "sample_id", "seed", "ratio", "norm_lplq", "norm_h_s")


def cmd_strichartz(cfg, out: RunOutput):
    """Dyadic Strichartz ratios, one row per (k, sample)."""
    from .evolution import AdmissiblePair, band_ensemble, dyadic_strichartz

    mesh, basis = cached_basis(cfg)
    pair = AdmissiblePair(cfg["p"], cfg["q"])
    rows = []
    try:
        for k in range(cfg["kmin"], cfg["kmax"] + 1):
            seed = cfg["seed"] + k
            ens = band_ensemble(basis, k, cfg["samples"], seed, kind=cfg["ensemble"], mesh=mesh)
            # the CLI only refuses empty bands; sparse low bands are reported as they are
            ratios = np.atleast_1d(dyadic_strichartz(basis, mesh, k, pair, cfg["T"], ens, min_band=1))
            # band-limited data: 2^{k/p} |u_k(0)|_2 stands in for the H^{1/p} norm
            hs = 2.0 ** (k / pair.p) * np.sqrt(np.sum(np.abs(ens.coeffs) ** 2, axis=0))
            for s_id, (r, h) in enumerate(zip(ratios, hs)):
                rows.append({"surface": cfg["surface_name"], "bc": cfg["bc"], "p": pair.p, "q": pair.q, "k": k,
                             "T": cfg["T"], "sample_id": s_id, "seed": seed, "ratio": r,
                             "norm_lplq": r * h, "norm_h_s": h})
    finally:
        # completed bands are kept when a later band fails
        out.write_csv("strichartz.csv", "strichartz", STRICHARTZ_COLUMNS, rows)


def cmd_heat(cfg, out: RunOutput):
    """Spectral heat kernel against the cone model at a corner."""
    from .cone_kernel import CHEEGER_COLUMNS, ConeParams, cheeger_compare

    mesh, basis = cached_basis(cfg)
    cones = cfg["surface"].cone_points
    if not 0 <= cfg["corner"] < len(cones):
        raise ConfigError(f"corner index {cfg['corner']} out of range (surface has {len(cones)} cone points)")
    cp = cones[cfg["corner"]]
    rows = cheeger_compare(basis, mesh, ConeParams(cp.rho), cp.location, cfg["radii"], cfg["times"],
                           singular_points=[c.location for c in cones])
    out.write_csv("cheeger.csv", "cheeger", CHEEGER_COLUMNS, rows)


def cmd_report(cfg, out: RunOutput):
    """Collect the manifests of earlier runs."""
    rows = []
    for mf in sorted(Path(cfg["runs"]).glob("*/manifest.json")):
        if mf.parent.resolve() == out.dir.resolve():
            continue
        doc = json.loads(mf.read_text(encoding="utf-8"))
        for f in doc["files"]:
            rows.append({"run": mf.parent.name, "command": doc["command"], "file": f["path"],
                         "schema": f["schema"], "rows": f["rows"], "status": doc["status"]})
    out.write_csv("report.csv", "report", ("run", "command", "file", "schema", "rows", "status"), rows)


COMMANDS = {
    "double": cmd_double, "mesh": cmd_mesh, "eigs": cmd_eigs, "squarefn": cmd_squarefn,
    "evolve": cmd_evolve, "strichartz": cmd_strichartz, "heat": cmd_heat, "report": cmd_report,
}
NEEDS_SURFACE = set(COMMANDS) - {"report"}


# ---------------------------------------------------------------------------
# argument handling

def _floats(text) -> list[float]:
    if isinstance(text, list):
        return text
    return [float(x) for x in str(text).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="key=value file; flags override its entries")
    g.add_argument("--surface", help="polygon file")
    g.add_argument("--out", help="output directory (default polywave-out/<command>)")
    g.add_argument("--seed", type=int)
    m = common.add_argument_group("discretisation")
    m.add_argument("--h", type=float)
    m.add_argument("--grade", type=float)
    m.add_argument("--min-angle", type=float)
    m.add_argument("--modes", type=int)
    m.add_argument("--bc", choices=("dirichlet", "neumann", "both"))
    m.add_argument("--trust", choices=("on", "off"), help="mark trusted modes against a 2h solve")
    e = common.add_argument_group("experiment")
    e.add_argument("--p", type=float)
    e.add_argument("--q", type=float)
    e.add_argument("--q-list")
    e.add_argument("--kmin", type=int)
    e.add_argument("--kmax", type=int)
    e.add_argument("--T", type=float)
    e.add_argument("--samples", type=int)
    e.add_argument("--state-modes", type=int)
    e.add_argument("--cutoff", type=float, help="random data on trusted modes up to this frequency")
    e.add_argument("--ensemble", choices=("gaussian", "focused", "mixed"))
    e.add_argument("--times")
    e.add_argument("--radii")
    e.add_argument("--corner", type=int)
    e.add_argument("--runs", help="directory of run folders scanned by report")

    parser = argparse.ArgumentParser(prog="polywave", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name))
    return parser


DEFAULTS = {
    "h": 0.02, "grade": None, "min_angle": 28.0, "modes": 300, "bc": "both", "trust": "on", "seed": 0,
    "p": 4.0, "q": 4.0, "q_list": "4 6", "kmin": 2, "kmax": 6, "T": 1.0, "samples": 32, "state_modes": 50,
    "cutoff": None,
    "ensemble": "gaussian", "times": "0 0.1 0.5 1", "radii": "0 0.1", "corner": 0, "runs": "polywave-out",
}
INT_KEYS = {"modes", "seed", "kmin", "kmax", "samples", "state_modes", "corner"}
FLOAT_KEYS = {"h", "grade", "min_angle", "p", "q", "T", "cutoff"}


def read_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    file_cfg = read_config_file(args.config) if args.config else {}
    known = set(DEFAULTS) | {"surface", "out"}
    unknown = set(file_cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key not in ("config", "command") and value is not None:
            cfg[key] = value
    try:
        for k in INT_KEYS:
            cfg[k] = int(cfg[k])
        for k in FLOAT_KEYS:
            cfg[k] = None if cfg[k] in (None, "", "none") else float(cfg[k])
        cfg["q_list"] = _floats(cfg["q_list"])
        cfg["times"] = _floats(cfg["times"])
        cfg["radii"] = _floats(cfg["radii"])
    except ValueError as exc:
        raise ConfigError(f"bad numeric value: {exc}") from exc
    if cfg["bc"] not in ("dirichlet", "neumann", "both"):
        raise ConfigError(f"bc must be dirichlet, neumann or both, got {cfg['bc']!r}")
    cfg["trust"] = cfg["trust"] in (True, "on", "true", "1", "yes")
    if cfg.get("out") is None:
        cfg["out"] = str(Path("polywave-out") / args.command)
    if args.command in NEEDS_SURFACE:
        if not cfg.get("surface"):
            raise ConfigError("--surface is required")
        try:
            text = Path(cfg["surface"]).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read surface {cfg['surface']}: {exc}") from exc
        try:
            poly = parse_polygon(text)
        except PolygonError as exc:
            raise ConfigError(f"invalid polygon: {exc}") from exc
        cfg["surface_path"] = str(cfg["surface"])
        cfg["surface_name"] = poly.name
        cfg["polygon_text"] = format_polygon(poly)
        cfg["surface"] = double(poly)
    if cfg["h"] is None or cfg["h"] <= 0:
        raise ConfigError("h must be positive")
    if cfg["modes"] < 1 or cfg["samples"] < 1:
        raise ConfigError("modes and samples must be positive")
    if cfg["kmin"] > cfg["kmax"]:
        raise ConfigError("kmin must not exceed kmax")
    return cfg


def _public_config(cfg: dict) -> dict:
    hidden = {"surface", "polygon_text", "surface_path", "surface_name"}
    out = {k: v for k, v in cfg.items() if k not in hidden}
    if "surface_path" in cfg:
        out["surface"] = cfg["surface_path"]
    if "polygon_text" in cfg:
        out["polygon_sha256"] = hashlib.sha256(cfg["polygon_text"].encode()).hexdigest()
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(args.out or "polywave-out/" + args.command)
    out = RunOutput(out_dir, args.command, {})
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"polywave: config error: {exc}", file=sys.stderr)
        out.write_manifest(EXIT_CONFIG, f"config: {exc}")
        return EXIT_CONFIG
    out = RunOutput(Path(cfg["out"]), args.command, _public_config(cfg))
    status, error = EXIT_OK, None
    try:
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        status, error = EXIT_CONFIG, f"config: {exc}"
    except Exception as exc:  # anything past validation is a numerical failure
        module = type(exc).__module__.rsplit(".", 1)[-1]
        tb = exc.__traceback__
        while tb is not None:
            mod = tb.tb_frame.f_globals.get("__name__", "")
            if mod.startswith("polywave."):
                module = mod.rsplit(".", 1)[-1]
            tb = tb.tb_next
        status, error = EXIT_NUMERIC, f"{module}: {type(exc).__name__}: {exc}"
    finally:
        out.write_manifest(status, error)
    if error:
        print(f"polywave: {'numerical failure in ' if status == EXIT_NUMERIC else ''}{error}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
