"""Refinement-study driver, configuration files and CSV output."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import ProblemParams, assemble_system, make_discretization, mean_vector
from .cases import CASES, get_case
from .mesh import generate_cube_mesh, generate_lshape_mesh, import_msh
from .norms import ERROR_COLUMNS, ErrorReport, RateTable, compute_errors, convergence_rates
from .solver import solve

log = logging.getLogger(__name__)

CSV_COLUMNS = ("h", "dofs_u", "dofs_p", "dofs_B") + ERROR_COLUMNS + tuple("rate_" + c for c in ERROR_COLUMNS)
DEFAULT_LEVELS = {"cube": (1, 2, 3, 4), "lshape": (1, 2, 3)}


class LevelError(RuntimeError):
    pass


@dataclass
class RunConfig:
    case: str = "test1"
    k: int = 1
    nu: float = 1.0
    sigma: float = 1.0
    mu_a: float | None = None
    mu_c: float = 0.5
    mu_j1: float = 0.05
    mu_j2: float = 0.01
    levels: tuple[int, ...] | None = None
    mesh: str | None = None
    out: str | None = None
    quad_degree: int | None = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if self.k not in (1, 2):
            raise ValueError("k must be 1 or 2")
        if self.levels is not None:
            self.levels = tuple(int(n) for n in self.levels)
            if any(n < 1 for n in self.levels) or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
                raise ValueError("levels must be positive and strictly increasing")

    @property
    def penalty(self) -> float:
        return self.mu_a if self.mu_a is not None else (10.0 if self.k == 1 else 20.0)

    def params(self, case) -> ProblemParams:
        return ProblemParams(
            k=self.k, sigma_S=self.sigma, sigma_M=self.sigma, nu_S=self.nu, nu_M=self.nu,
            mu_a=self.penalty, mu_c=self.mu_c, mu_J1=self.mu_j1, mu_J2=self.mu_j2,
            chi=case.chi, theta=case.theta, quad_degree=self.quad_degree,
        )


@dataclass
class StudyResult:
    config: RunConfig
    reports: list[ErrorReport]
    rates: RateTable | None
    timings: list[float] = field(default_factory=list)


def _meshes(config: RunConfig, domain: str):
    if config.mesh:
        yield "file", import_msh(config.mesh)
        return
    gen = generate_cube_mesh if domain == "cube" else generate_lshape_mesh
    for n in config.levels or DEFAULT_LEVELS[domain]:
        yield n, gen(n)


def run_level(config: RunConfig, mesh, case=None) -> ErrorReport:
    case = case or get_case(config.case, config.k)
    params = config.params(case)
    disc = make_discretization(mesh, config.k)
    system = assemble_system(disc, params, case)
    sol = solve(system, mean_vector(disc.Q))
    return compute_errors(case, disc, params, sol.u, sol.p, sol.B)


def run_case(config: RunConfig) -> StudyResult:
    case = get_case(config.case, config.k)
    reports, timings = [], []
    for level, mesh in _meshes(config, case.domain):
        t0 = time.perf_counter()
        try:
            rep = run_level(config, mesh, case)
        except Exception as exc:
            raise LevelError(f"level {level}: {exc}") from exc
        timings.append(time.perf_counter() - t0)
        log.info("level %s: h=%.4g cells=%d (%.1fs)", level, rep.h, mesh.num_cells, timings[-1])
        reports.append(rep)
    rates = convergence_rates(reports) if len(reports) > 1 else None
    result = StudyResult(config, reports, rates, timings)
    if config.out:
        emit_csv(result, config.out)
    return result


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or not np.isfinite(v):
        return "nan" if v is not None else ""
    return f"{v:.6g}"


def csv_rows(result: StudyResult) -> list[list[str]]:
    rows = []
    for i, rep in enumerate(result.reports):
        row = [_fmt(getattr(rep, c)) for c in CSV_COLUMNS[:4] + ERROR_COLUMNS]
        for j, _ in enumerate(ERROR_COLUMNS):
            row.append("" if i == 0 else _fmt(float(result.rates.rates[i - 1, j])))
        rows.append(row)
    return rows


def emit_csv(result: StudyResult, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows(csv_rows(result))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def format_table(result: StudyResult) -> str:
    cols = ("h",) + ERROR_COLUMNS
    lines = ["  ".join(f"{c:>11}" for c in cols)]
    for i, rep in enumerate(result.reports):
        lines.append("  ".join(f"{getattr(rep, c):11.4e}" for c in cols))
        if i > 0:
            r = result.rates.rates[i - 1]
            lines.append("  ".join([f"{'rate':>11}"] + [f"{x:11.3f}" for x in r]))
    return "\n".join(lines)


# ---------------------------------------------------------------- configuration and CLI

_FLOAT_KEYS = {"nu", "sigma", "mu_a", "mu_c", "mu_j1", "mu_j2"}
_INT_KEYS = {"k", "quad_degree"}


def _parse_levels(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def read_config(path) -> dict:
    """Flat ``key = value`` file; keys mirror the CLI flags (dashes or underscores)."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "levels":
            out[key] = _parse_levels(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        elif key in _INT_KEYS:
            out[key] = int(value)
        elif key in {"case", "mesh", "out"}:
            out[key] = value
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stabmhd", description="Convergence studies for the stabilized MHD discretization.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a refinement study and write CSV")
    run.add_argument("--config", help="key=value file; explicit flags override it")
    run.add_argument("--case", choices=CASES)
    run.add_argument("--k", type=int, choices=(1, 2))
    run.add_argument("--nu", type=float)
    run.add_argument("--sigma", type=float)
    run.add_argument("--mu-a", type=float)
    run.add_argument("--mu-c", type=float)
    run.add_argument("--mu-j1", type=float)
    run.add_argument("--mu-j2", type=float)
    run.add_argument("--levels", type=_parse_levels, help="e.g. '1,2,3,4'")
    run.add_argument("--mesh", help="MSH 2.2 file (overrides the generator)")
    run.add_argument("--quad-degree", type=int)
    run.add_argument("--out", help="CSV output path")
    run.add_argument("-q", "--quiet", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        config = config_from_args(args)
        result = run_case(config)
    except (ValueError, OSError, LevelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        print(format_table(result))
    return 0


__all__ = ["RunConfig", "StudyResult", "run_case", "run_level", "emit_csv", "read_config", "main"]
