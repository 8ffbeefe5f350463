"""Command line front end: ``skflow <command> [flags]``.

Exit codes: 0 success, 1 criterion failure or non-convergence, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .coefficient import from_name
from .errors import ConfigError, FlaggedDerivativeError, SkflowError
from .functional import SolverConfig, solve
from .levy import JumpLaw, LevySpec, sample_path
from .malliavin import MalliavinProbe, derivative
from .paths import CadlagPath, linear_combine, read_csv, sup_norm, write_csv
from .skorokhod import skorokhod_distance_bound, skorokhod_distance_exact
from .studies import STUDIES, run_study

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SCHEMA = 1
_SPEC_FIELDS = {"schema", "drift", "intensity", "jump_law", "truncation", "compensate", "horizon"}


def fmt(v) -> str:
    """Numbers with 12 significant digits; everything else as text."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if data.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: missing or unsupported schema version (expected schema: {SCHEMA})")
    return data


def load_spec(path) -> tuple[LevySpec, float]:
    data = _load_json(path)
    unknown = set(data) - _SPEC_FIELDS
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")
    law = data.get("jump_law", {"kind": "fixed", "params": {"size": [0.0]}})
    if not isinstance(law, dict) or set(law) - {"kind", "params"}:
        raise ConfigError(f"{path}: jump_law must be {{kind, params}}")
    try:
        spec = LevySpec(drift=tuple(np.atleast_1d(data.get("drift", [0.0]))), intensity=float(data.get("intensity", 0.0)),
                        jump_law=JumpLaw(law.get("kind", "fixed"), dict(law.get("params", {}))),
                        truncation=float(data.get("truncation", 0.0)), compensate=bool(data.get("compensate", False)))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return spec, float(data.get("horizon", 1.0))


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SKFLOW_SEED")
    if env is None:
        raise ConfigError("a seed is required: pass --seed or set SKFLOW_SEED")
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SKFLOW_SEED must be an integer, got {env!r}") from None


def _read_path(path) -> CadlagPath:
    with open(path, newline="") as fh:
        return read_csv(fh)


def _write_path(path: CadlagPath, out) -> None:
    with open(out, "w", newline="") as fh:
        write_csv(path, fh)


def _write_table(rows, out, columns=None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c, "")) for c in columns])


# -- commands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec, horizon = load_spec(args.spec)
    _write_path(sample_path(spec, horizon, _seed(args), args.stream), args.out)
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    return SolverConfig(n_max=args.nmax, tol=args.tol, max_segments=args.max_segments,
                        report_skorokhod=getattr(args, "skorokhod", False))


def cmd_solve(args) -> int:
    coef = from_name(args.coef)
    H, Y = _read_path(args.H), _read_path(args.Y)
    G = _read_path(args.G) if args.G else None
    X, diag = solve(H, G, Y, coef, _solver_config(args))
    _write_path(X, args.out)
    if args.diag:
        with open(args.diag, "w", newline="") as fh:
            diag.to_csv(fh)
    if not diag.converged:
        print(f"not converged: stopped by {diag.stop_reason} at n={diag.n_final}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_metric(args) -> int:
    x, y = _read_path(args.x), _read_path(args.y)
    if args.exact:
        print(fmt(skorokhod_distance_exact(x, y)))
    else:
        lo, hi = skorokhod_distance_bound(x, y, kinks=args.kinks, grid=args.grid)
        print(f"{fmt(lo)},{fmt(hi)}")
    return EXIT_OK


def _parse_grid(text: str, spec: LevySpec, horizon: float, vnodes: int):
    """``r:a:b:n,v:quadrature`` or ``r:a:b:n,v:a:b:n`` into nodes and weights."""
    parts = {}
    for item in text.split(","):
        key, _, rest = item.partition(":")
        if key not in ("r", "v") or key in parts:
            raise ConfigError(f"bad grid item {item!r}")
        parts[key] = rest
    if set(parts) != {"r", "v"}:
        raise ConfigError("grid needs both r and v")

    def lin(s, what):
        try:
            a, b, n = s.split(":")
            a, b, n = float(a), float(b), int(n)
        except ValueError:
            raise ConfigError(f"{what} grid must be a:b:n") from None
        if n < 1 or b < a:
            raise ConfigError(f"{what} grid must have n >= 1 and a <= b")
        return np.linspace(a, b, n)

    r = lin(parts["r"], "r")
    if r[0] < 0 or r[-1] > horizon:
        raise ConfigError("r grid leaves [0, T]")
    rw = np.full(r.size, horizon)
    if r.size > 1:
        rw = np.zeros(r.size)
        h = np.diff(r)
        rw[:-1] += h / 2
        rw[1:] += h / 2
    if parts["v"] == "quadrature":
        if spec.dim != 1:
            raise ConfigError("v quadrature needs a scalar driver")
        v, p = spec.jump_law.quadrature(vnodes)
        v = v[:, 0]
        vw = spec.intensity * p * (np.abs(v) > spec.truncation)
    else:
        v = lin(parts["v"], "v")
        vw = np.full(v.size, spec.intensity / v.size)
    return r, rw, v, vw


def cmd_malliavin(args) -> int:
    spec, horizon = load_spec(args.spec)
    if spec.dim != 1:
        raise ConfigError("the shift derivative needs a scalar driver")
    coef = from_name(args.coef)
    Y = sample_path(spec, horizon, _seed(args), args.stream)
    H = CadlagPath.constant([args.xi], horizon)
    config = _solver_config(args)
    if not args.grid:
        if args.r is None or args.v is None:
            raise ConfigError("--r and --v are required without --grid")
        try:
            D = derivative(coef, H, None, Y, MalliavinProbe(args.r, args.v), config)
        except FlaggedDerivativeError as exc:
            _write_path(linear_combine([(1.0, exc.shifted_solution), (-1.0, exc.base_solution)]), args.out)
            print(f"flagged: {exc}", file=sys.stderr)
            return EXIT_FAIL
        _write_path(D, args.out)
        return EXIT_OK
    r, rw, v, vw = _parse_grid(args.grid, spec, horizon, args.vnodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    status = EXIT_OK
    k = 0
    for i, ri in enumerate(r):
        for j, vj in enumerate(v):
            flagged = False
            try:
                D = derivative(coef, H, None, Y, MalliavinProbe(float(ri), float(vj)), config)
            except FlaggedDerivativeError as exc:
                D = linear_combine([(1.0, exc.shifted_solution), (-1.0, exc.base_solution)])
                flagged = True
                status = EXIT_FAIL
            _write_path(D, out / f"probe_{k:04d}.csv")
            rows.append({"probe": k, "r": float(ri), "v": float(vj), "sup_abs_D": sup_norm(D),
                         "l2_contribution": float(rw[i] * vw[j] * np.sum(D.terminal ** 2)), "flagged": flagged})
            k += 1
    _write_table(rows, out / "summary.csv")
    return status


_GNUPLOT = """set datafile separator ","
set key autotitle columnhead
set title "{name}"
plot "{csv}" using {x}:{y} with linespoints
"""


def cmd_study(args) -> int:
    overrides = {}
    if args.config:
        overrides = _load_json(args.config)
        overrides.pop("schema")
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.seed is not None or "seed" not in overrides:
        overrides["seed"] = _seed(args)
    report = run_study(args.name, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{args.name}.csv"
    _write_table(report.rows, csv_path)
    summary = report.summary()
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.gnuplot and report.rows:
        cols = list(report.rows[0])
        with open(out / f"{args.name}.gp", "w") as fh:
            fh.write(_GNUPLOT.format(name=args.name, csv=csv_path.name, x=1, y=min(3, len(cols))))
    for c in report.criteria:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['criterion']}: {fmt(c['value'])} "
              f"{c['relation']} {fmt(c['threshold'])}")
    if report.noop:
        print("no-op: study ran with 0 samples")
    return EXIT_OK if report.passed else EXIT_FAIL


# -- parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _solver_flags(p):
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--nmax", type=int, default=40)
    p.add_argument("--max-segments", type=int, default=SolverConfig.max_segments)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skflow", description="Pathwise solver for path-dependent SDEs driven by Lévy paths.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample a driver path")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="solve X = H + ∫ f(s-, G, X) dY")
    p.add_argument("--coef", required=True)
    p.add_argument("--H", required=True)
    p.add_argument("--G")
    p.add_argument("--Y", required=True)
    _solver_flags(p)
    p.add_argument("--skorokhod", action="store_true", help="report Skorokhod upper bounds per iterate")
    p.add_argument("--out", required=True)
    p.add_argument("--diag")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("metric", help="Skorokhod distance of two paths")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--kinks", type=int, default=1)
    p.add_argument("--grid", type=float, default=0.05)
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("malliavin", help="jump-shift derivative of the solution")
    p.add_argument("--coef", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--r", type=float)
    p.add_argument("--v", type=float)
    p.add_argument("--grid", help="batch mode, e.g. r:0:1:11,v:quadrature")
    p.add_argument("--vnodes", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--stream", type=int, default=0)
    _solver_flags(p)
    p.set_defaults(tol=1e-6)
    p.add_argument("--out", required=True, help="CSV file, or a directory in batch mode")
    p.set_defaults(func=cmd_malliavin)

    p = sub.add_parser("study", help="run a named batch experiment")
    p.add_argument("name", choices=sorted(STUDIES))
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON overrides with schema: 1")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gnuplot", action="store_true")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SkflowError, OSError) as exc:
        print(f"skflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
