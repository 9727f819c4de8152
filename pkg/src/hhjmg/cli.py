"""Command line driver for the plate experiments and the certifiers.

Exit codes: 0 success, 1 numerical failure (or a failed certificate),
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass

import numpy as np

from .certify import check_commute_curl, check_commute_divdiv, check_exactness, symcurl_of
from .hhj import SolverError, assemble_bform, assemble_symcurl
from .mesh import MeshError, initial_mesh, read_mesh, refine_uniform
from .pipeline import ExperimentConfig, convergence_study, run_experiment

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CERT_TOL = 1e-12


@dataclass
class RunConfig:
    domain: str | None = None
    levels: int = 6
    nu: float | None = None
    m1: int = 1
    m2: int = 1
    tol: float = 1e-8
    max_iter: int = 200
    out: str | None = None
    mode: str = "solve"
    mesh: str | None = None

    def validate(self):
        if self.levels < 1:
            raise ValueError("--levels must be at least 1")
        if not self.tol > 0:
            raise ValueError("--tol must be positive")
        if self.m1 < 0 or self.m2 < 0 or self.m1 + self.m2 < 1:
            raise ValueError("--m1/--m2 must be >= 0 with m1 + m2 >= 1")
        if self.max_iter < 1:
            raise ValueError("--max-iter must be at least 1")
        if self.nu is not None and not 0.0 <= self.nu < 0.5:
            raise ValueError("--nu must lie in [0, 0.5)")
        if self.mode == "convergence" and self.domain == "lshape":
            raise ValueError("convergence mode needs the manufactured square solution")
        if self.mesh is not None and self.domain == "lshape":
            raise ValueError("--mesh is only supported with the square pipeline")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hhjmg",
        description="Multigrid for the lowest-order HHJ plate discretization.")
    p.add_argument("--domain", choices=("square", "lshape"), default=None,
                   help="square (default) or lshape; certify mode checks both when omitted")
    p.add_argument("--levels", type=int, default=6, help="finest level J (default 6)")
    p.add_argument("--nu", type=float, default=None,
                   help="Poisson ratio (default 0.3 on the square, 0 on the L-shape)")
    p.add_argument("--m1", type=int, default=1, help="pre-smoothing sweeps")
    p.add_argument("--m2", type=int, default=1, help="post-smoothing sweeps")
    p.add_argument("--tol", type=float, default=1e-8, help="relative residual tolerance")
    p.add_argument("--max-iter", type=int, default=200, dest="max_iter")
    p.add_argument("--mode", choices=("solve", "certify", "convergence"), default="solve")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--mesh", default=None,
                   help="level-1 mesh file for the square pipeline (text format)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return "nan" if np.isnan(x) else f"{x:.10e}"


def _load_mesh(cfg):
    return None if cfg.mesh is None else read_mesh(cfg.mesh)


def _solve(cfg: RunConfig) -> tuple[str, int]:
    domain = cfg.domain or "square"
    pairs = [(1, 1), (2, 2)]
    if (cfg.m1, cfg.m2) not in pairs:
        pairs.append((cfg.m1, cfg.m2))
    mesh = _load_mesh(cfg)
    first = 1 if mesh is not None else min(3, cfg.levels)
    rows = run_experiment(ExperimentConfig(
        domain=domain, levels=cfg.levels, nu=cfg.nu, smoothing=tuple(pairs), tol=cfg.tol,
        max_iter=cfg.max_iter, first_level=first, mesh=mesh))
    keys = [f"iters_{a}{b}" for a, b in pairs]
    table = [[r["level"], r["size"]] + [r[k] for k in keys] for r in rows]
    return _csv(["level", "size"] + keys, table), EXIT_OK


def _convergence(cfg: RunConfig) -> tuple[str, int]:
    nu = 0.3 if cfg.nu is None else cfg.nu
    rows = convergence_study(cfg.levels, nu=nu, mesh=_load_mesh(cfg))
    table = [[r["level"], _fmt(r["h"]), _fmt(r["stress_l2_err"]), _fmt(r["defl_h1_err"]),
              "nan" if np.isnan(r["order"]) else f"{r['order']:.4f}"] for r in rows]
    return _csv(["level", "h", "stress_l2_err", "defl_h1_err", "order"], table), EXIT_OK


def _divdiv_fields():
    def wI(x, y):
        w = 1.0 + x - 2.0 * y + x * x + 3.0 * x * y - y * y
        out = np.zeros(np.shape(w) + (2, 2))
        out[..., 0, 0] = out[..., 1, 1] = w
        return out
    return {"w I (quadratic w)": wI,
            "symcurl (x^2 y, 0)": symcurl_of(0, 2, 1),
            "symcurl (0, y^3)": symcurl_of(1, 0, 3)}


def _certify(cfg: RunConfig) -> tuple[str, int]:
    domains = [cfg.domain] if cfg.domain else ["square", "lshape"]
    lines, ok = [], True
    for dom in domains:
        tri = initial_mesh(dom)
        for k in range(1, cfg.levels + 1):
            if k > 1:
                tri, _ = refine_uniform(tri)
            rep = check_exactness(tri)
            ok &= rep.ok
            lines.append(f"{dom} level {k}: {rep.summary()}")
            C, B = assemble_symcurl(tri), assemble_bform(tri)
            for deg in (1, 2, 3):
                dev = check_commute_curl(tri, deg, C=C)
                ok &= dev <= CERT_TOL
                lines.append(f"{dom} level {k}: curl diagram, degree {deg}: {dev:.2e}")
            for name, tau in _divdiv_fields().items():
                dev = check_commute_divdiv(tri, tau, B=B)
                ok &= dev <= CERT_TOL
                lines.append(f"{dom} level {k}: b-form diagram, {name}: {dev:.2e}")
    lines.append("all certificates passed" if ok else "CERTIFICATE FAILURE")
    return "\n".join(lines) + "\n", EXIT_OK if ok else EXIT_FAIL


def run(cfg: RunConfig) -> int:
    """Execute one mode and write its output; returns the exit code."""
    try:
        text, code = {"solve": _solve, "certify": _certify, "convergence": _convergence}[cfg.mode](cfg)
    except (MeshError, OSError) as exc:
        print(f"hhjmg: cannot read mesh: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"hhjmg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = vars(args)
    opts.pop("verbose")
    cfg = RunConfig(**opts)
    try:
        cfg.validate()
    except ValueError as exc:
        parser.error(str(exc))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
