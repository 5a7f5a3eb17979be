"""Command-line front end.

Every subcommand prints one JSON summary line on stdout and writes its files
to ``--out``.  Exit codes: 0 success, 2 input error, 3 numerical failure
(diagnostic JSON on stderr).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import density as dens
from . import regions as reg
from . import spectral
from . import stats
from ._io import write_csv, write_json
from .errors import NumeasureError, PreconditionError
from .fixtures import FIXTURES, get_fixture
from .linalg import SquareMatrix

COMMANDS = ("density", "regions", "singular", "stats", "clt", "examples")
FORMATS = ("csv", "json", "gp")
DEFAULTS = {
    "ntheta": spectral.DEFAULT_N_THETA,
    "nsamples": 100_000,
    "seed": 0,
    "tol_circle": reg.DEFAULT_TOL_CIRCLE,
    "out": ".",
    "format": ",".join(FORMATS),
    "threads": os.cpu_count() or 1,
    "family": "jordan",
    "n_list": "16,64,256",
    "grid_size": 200,
}


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    matrix: str | None
    fixture: str | None
    grid: reg.GridSpec | None
    ntheta: int
    nsamples: int
    seed: int
    tol_circle: float
    out: Path
    formats: tuple
    threads: int
    family: str
    n_list: tuple


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="numeasure", description="Numerical measure of a complex matrix.")
    p.add_argument("command", choices=COMMANDS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--matrix", help="JSON file {n, entries | real_entries} or a whitespace table of complex numbers")
    src.add_argument("--fixture", help="built-in matrix, e.g. a2_jordan, generic3, reducible(2)")
    p.add_argument("--grid", help="x0,x1,y0,y1,nx,ny (default: bounding box of W(A), 200x200)")
    p.add_argument("--ntheta", type=int)
    p.add_argument("--nsamples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol-circle", dest="tol_circle", type=float)
    p.add_argument("--out")
    p.add_argument("--format", help="comma list from csv,json,gp")
    p.add_argument("--threads", type=int)
    p.add_argument("--family", help="clt family: jordan or hermitian")
    p.add_argument("--n-list", dest="n_list", help="clt dimensions, comma separated")
    p.add_argument("--config", help="JSON file with any of the options above; flags override it")
    return p


def _merge(ns: argparse.Namespace) -> dict:
    opts = {}
    if ns.config:
        try:
            opts = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"config {ns.config}: {exc}") from exc
        if not isinstance(opts, dict):
            raise InputError("config must be a JSON object")
        opts = {k.replace("-", "_"): v for k, v in opts.items()}
    for k, v in vars(ns).items():
        if v is not None and k != "config":
            opts[k] = v
    if opts.get("matrix") and opts.get("fixture"):
        if ns.matrix is not None:
            opts.pop("fixture")
        elif ns.fixture is not None:
            opts.pop("matrix")
        else:
            raise InputError("give either matrix or fixture, not both")
    return opts


def make_config(ns: argparse.Namespace) -> RunConfig:
    o = {**DEFAULTS, **_merge(ns)}
    try:
        ntheta, nsamples, seed, threads = int(o["ntheta"]), int(o["nsamples"]), int(o["seed"]), int(o["threads"])
        tol = float(o["tol_circle"])
        n_list = o["n_list"]
        n_list = tuple(int(v) for v in (n_list.split(",") if isinstance(n_list, str) else n_list))
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad numeric option: {exc}") from exc
    if min(ntheta, nsamples, threads) <= 0 or tol <= 0 or seed < 0 or not n_list or min(n_list) <= 0:
        raise InputError("numeric options must be positive")
    formats = tuple(f.strip() for f in str(o["format"]).split(",") if f.strip())
    if not formats or any(f not in FORMATS for f in formats):
        raise InputError(f"--format takes a comma list from {','.join(FORMATS)}")
    grid = None
    if o.get("grid"):
        g = o["grid"]
        grid = reg.GridSpec.parse(g if isinstance(g, str) else ",".join(str(v) for v in g))
    out = Path(o["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise InputError(f"output directory {out} is not writable")
    return RunConfig(
        command=o["command"],
        matrix=o.get("matrix"),
        fixture=o.get("fixture"),
        grid=grid,
        ntheta=ntheta,
        nsamples=nsamples,
        seed=seed,
        tol_circle=tol,
        out=out,
        formats=formats,
        threads=threads,
        family=str(o["family"]),
        n_list=n_list,
    )


def load_matrix(cfg: RunConfig) -> np.ndarray:
    if cfg.fixture:
        return np.asarray(get_fixture(cfg.fixture).matrix)
    if not cfg.matrix:
        raise InputError("a matrix is required: --matrix <path> or --fixture <name>")
    path = Path(cfg.matrix)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    if path.suffix.lower() == ".json":
        return np.asarray(SquareMatrix.load(path))
    try:
        a = np.loadtxt(path, dtype=complex, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return np.asarray(SquareMatrix(a))


def _emit(summary: dict):
    print(json.dumps(summary, sort_keys=True))


def _scalar(a: np.ndarray) -> complex | None:
    c = np.trace(a) / a.shape[0]
    if np.linalg.norm(a - c * np.eye(a.shape[0])) <= 1e-14 * max(np.linalg.norm(a), 1e-300):
        return complex(c)
    return None


def cmd_density(cfg: RunConfig) -> dict:
    a = load_matrix(cfg)
    c = _scalar(a)
    if c is not None:
        return {"command": "density", "notice": "Dirac mass", "at": [c.real, c.imag]}
    t0 = time.perf_counter()
    T = spectral.sample_curves(a, cfg.ntheta)
    try:
        dens._check_planar(T)
    except dens.QuasiHermitianError:
        return _density_1d(cfg, a, t0)
    grid = cfg.grid or reg.default_grid(T, DEFAULTS["grid_size"], DEFAULTS["grid_size"])
    G = dens.density_grid(a, T, grid, threads=cfg.threads)
    files = []
    if "csv" in cfg.formats:
        files.append(str(G.export_csv(cfg.out / "density.csv")))
    if "json" in cfg.formats:
        files.append(str(G.export_json(cfg.out / "density.json")))
    if "gp" in cfg.formats:
        files.append(str(G.export_gnuplot(cfg.out / "density.gp", "density.csv")))
    m = G.meta()
    return {
        "command": "density",
        "mass": m["mass"],
        "mass_trapezoid": m["mass_trapezoid"],
        "max": m["max"],
        "runtime": time.perf_counter() - t0,
        "nan_count": m["nan_count"],
        "files": files,
    }


def _density_1d(cfg: RunConfig, a: np.ndarray, t0: float) -> dict:
    """W(A) is a segment ``c + e^{i alpha} [l_min, l_max]``: write the B-spline density along it."""
    n = a.shape[0]
    c = np.trace(a) / n
    b = a - c * np.eye(n)
    alpha = 0.5 * np.angle(np.trace(b @ b))
    h = np.exp(-1j * alpha) * b
    h = 0.5 * (h + h.conj().T)
    from .linalg import hermitian_eigen

    lam = hermitian_eigen(h).values
    m = 2001 if cfg.grid is None else max(cfg.grid.nx, 2)
    t = np.linspace(lam[0], lam[-1], m)
    f = dens.hermitian_density(lam, t)
    z = c + np.exp(1j * alpha) * t
    files = []
    if "csv" in cfg.formats:
        files.append(str(write_csv(cfg.out / "density1d.csv", ["t", "x", "y", "f"], [t, z.real, z.imag, f])))
    summary = {
        "command": "density",
        "notice": "quasi-Hermitian matrix: numerical range is a segment, wrote the 1-D density",
        "center": [float(c.real), float(c.imag)],
        "angle": float(alpha),
        "knots": lam.tolist(),
        "mass": _piecewise_mass(lam),
        "max": float(f.max()),
        "runtime": time.perf_counter() - t0,
        "files": files,
    }
    if "json" in cfg.formats:
        files.append(str(write_json(cfg.out / "density1d.json", {k: v for k, v in summary.items() if k != "files"})))
    return summary


def _piecewise_mass(lam) -> float:
    """Integral of the B-spline by Gauss-Legendre on each knot interval (exact for its pieces)."""
    from scipy.special import roots_legendre

    x, w = roots_legendre(max(len(lam), 2))
    tot = 0.0
    for a, b in zip(lam[:-1], lam[1:]):
        if b > a:
            tot += 0.5 * (b - a) * float(np.sum(w * dens.hermitian_density(lam, 0.5 * (b - a) * x + 0.5 * (a + b))))
    return tot


def cmd_regions(cfg: RunConfig) -> dict:
    a = load_matrix(cfg)
    if _scalar(a) is not None:
        raise PreconditionError("scalar matrix: W(A) is a point, no regions")
    T = spectral.sample_curves(a, cfg.ntheta)
    grid = cfg.grid or reg.default_grid(T, DEFAULTS["grid_size"], DEFAULTS["grid_size"])
    R = reg.classify_grid(a, T, grid, cfg.tol_circle)
    files = []
    if "csv" in cfg.formats:
        files.append(str(R.export_csv(cfg.out / "regions.csv")))
    if "json" in cfg.formats:
        files.append(str(R.export_json(cfg.out / "regions.json")))
    s = R.summary()
    vals = sorted(int(v) for v in np.unique(R.n_tangents) if v >= 0)
    return {"command": "regions", "values": vals, "components": s["components"], "ambiguous_cells": s["ambiguous_cells"], "files": files}


def cmd_singular(cfg: RunConfig) -> dict:
    a = load_matrix(cfg)
    T = spectral.sample_curves(a, cfg.ntheta)
    cloud = spectral.critical_points(T)
    crossings, segments = spectral.detect_crossings(T)
    try:
        cs = spectral.cycle_structure(T)
        curve_of = {j: k for k, cyc in enumerate(cs.cycles) for j in cyc}
        cycles = [list(c) for c in cs.cycles]
    except NumeasureError:
        curve_of = {j: j for j in range(T.n)}
        cycles = None
    curve = np.array([curve_of[int(j)] for j in cloud.branch])
    points = spectral.point_components(T)
    files = []
    if "csv" in cfg.formats:
        files.append(
            str(
                write_csv(
                    cfg.out / "curves.csv",
                    ["theta", "x", "y", "branch", "curve"],
                    [cloud.theta, cloud.z.real, cloud.z.imag, cloud.branch, curve],
                )
            )
        )
        files.append(str(spectral.export_segments_csv(segments, cfg.out / "bitangents.csv")))
    summary = {
        "command": "singular",
        "n": T.n,
        "cycles": cycles,
        "n_curves": len(set(curve_of.values())),
        "segments": len(segments),
        "crossings": len(crossings),
        "point_components": [[z.real, z.imag] for z, _ in points],
        "files": files,
    }
    if "json" in cfg.formats:
        files.append(str(write_json(cfg.out / "singular.json", {k: v for k, v in summary.items() if k != "files"})))
    return summary


def cmd_stats(cfg: RunConfig) -> dict:
    a = load_matrix(cfg)
    rep = stats.exact_moments(a)
    S = stats.mc_measure(a, cfg.nsamples, cfg.seed, cfg.threads)
    s = S.summary
    doc = {
        **rep.to_json(),
        "mc": {
            "n_samples": cfg.nsamples,
            "seed": cfg.seed,
            "mean": [s.mean.real, s.mean.imag],
            "variance": s.variance,
            "m2": s.m2,
            "m4": s.m4,
            "se_mean": s.se_mean,
            "se_variance": s.se_variance,
        },
    }
    files = []
    if "json" in cfg.formats:
        files.append(str(write_json(cfg.out / "moments.json", doc)))
    if "csv" in cfg.formats:
        files.append(str(S.export_csv(cfg.out / "samples.csv")))
    return {"command": "stats", "mean": doc["mean"], "variance": rep.variance, "mc_variance": s.variance, "files": files}


def cmd_clt(cfg: RunConfig) -> dict:
    if cfg.matrix or cfg.fixture:
        family = [load_matrix(cfg)]
        n_list = None
    else:
        family, n_list = cfg.family, cfg.n_list
    rep = stats.clt_experiment(family, n_list, cfg.nsamples, cfg.seed, cfg.threads)
    files = []
    if "json" in cfg.formats:
        files.append(str(rep.export_json(cfg.out / "clt_report.json")))
    return {"command": "clt", "rows": [r.to_json() for r in rep.rows], "files": files}


def cmd_examples(cfg: RunConfig) -> dict:
    listing = [get_fixture(name).describe() for name in FIXTURES]
    for item in listing:
        item["params"] = {k: (str(v) if isinstance(v, (complex, list)) else v) for k, v in item["params"].items()}
    files = []
    if "json" in cfg.formats:
        files.append(str(write_json(cfg.out / "examples.json", listing)))
    return {"command": "examples", "fixtures": listing, "files": files}


HANDLERS = {
    "density": cmd_density,
    "regions": cmd_regions,
    "singular": cmd_singular,
    "stats": cmd_stats,
    "clt": cmd_clt,
    "examples": cmd_examples,
}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    mod = type(exc).__module__.rsplit(".", 1)[-1]
    print(json.dumps({"error": kind, "type": type(exc).__name__, "module": mod, "message": str(exc)}), file=sys.stderr)
    return code


def _join_negative_values(argv):
    """``--grid -1,1,...`` would read as a flag; rewrite it to ``--grid=-1,1,...``."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--grid":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--grid={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ns = build_parser().parse_args(_join_negative_values(argv))
    try:
        cfg = make_config(ns)
        summary = HANDLERS[cfg.command](cfg)
    except (InputError, PreconditionError) as exc:
        return _fail(2, "input", exc)
    except (NumeasureError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(3, "numerical", exc)
    _emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
