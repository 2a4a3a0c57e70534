"""Command-line interface: ``nbgam {fit,predict,diagnose,simulate,demo-splines}``.

Every command writes plot-ready CSV/JSON plus a run manifest. Exit codes:
0 success, 1 error (bad input, parse failure, out-of-domain prediction),
2 returned with a caveat (unconverged fit, constant diagnostic field).
Diagnostics go to stderr; stdout stays empty unless ``--verbose``.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from ._io import atomic_write_text, sha256_file
from .data import PanelError, load_panel, month_index, month_label
from .model_dsl import Family, FormulaError, OffsetRule, parse_formula

logger = logging.getLogger("nbgam")

EXIT_OK, EXIT_ERROR, EXIT_CAVEAT = 0, 1, 2


class CliError(Exception):
    """Fatal user-facing error; ``code`` is the exit status."""

    def __init__(self, message, code=EXIT_ERROR):
        super().__init__(message)
        self.code = code


class Run:
    """Collects manifest fields while a command runs."""

    def __init__(self, argv):
        self.argv = list(argv)
        self.inputs = {}
        self.outputs = {}
        self.seeds = {}
        self.notes = {}
        self.start = time.perf_counter()

    def read(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise CliError(f"no such file: {path}")
        self.inputs[str(path)] = sha256_file(path)
        return path

    def write(self, path, text: str) -> None:
        atomic_write_text(path, text)
        self.outputs[str(path)] = sha256_file(path)

    def write_csv(self, path, frame: pd.DataFrame) -> None:
        self.write(path, frame.to_csv(index=False, lineterminator="\n"))

    def manifest(self) -> dict:
        return {
            "command": ["nbgam"] + self.argv,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "versions": {"nbgam": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "pandas": pd.__version__},
            "outputs": self.outputs,
            "notes": self.notes,
            "wall_clock_seconds": round(time.perf_counter() - self.start, 3),
        }


def _progress(args, message):
    if args.verbose:
        print(message, flush=True)


def _manifest_path(out: Path, is_dir: bool) -> Path:
    return out / "manifest.json" if is_dir else out.with_name(out.name + ".manifest.json")


def _load(run, path):
    try:
        return load_panel(run.read(path))
    except (PanelError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load panel {path}: {exc}") from None


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args, run) -> int:
    from .fitter import PirlsError, select_smoothing

    try:
        offset = OffsetRule.parse(args.offset)
        spec = parse_formula(args.formula, Family(args.family), offset)
    except FormulaError as exc:
        raise CliError(_caret(args.formula, exc)) from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    panel = _load(run, args.data)
    _progress(args, f"loaded {len(panel)} rows; {panel.report.summary()}")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = select_smoothing(spec, panel)
        for w in caught:
            logger.warning("%s", w.message)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    except PirlsError as exc:
        raise CliError(f"fit failed: {exc}") from None
    out = Path(args.out)
    run.write(out, fit.to_json())
    run.notes.update({"converged": fit.converged, "message": fit.message,
                      "n_obs": fit.n_obs, "n_dropped_rows": panel.report.n_dropped + fit.n_dropped,
                      "phi": None if np.isinf(fit.phi) else fit.phi, "edf_total": fit.edf_total})
    _progress(args, f"edf {fit.edf_total:.3f}, phi {fit.phi:.4g}, aic {fit.aic:.2f}: "
                    f"{fit.message}")
    if not fit.converged:
        logger.warning("fit returned without converging: %s", fit.message)
        return EXIT_CAVEAT
    return EXIT_OK


def _caret(text, exc: FormulaError) -> str:
    return f"{exc}\n  {text}\n  {' ' * exc.offset}^"


# ---------------------------------------------------------------------------
# predict


def parse_grid(text: str) -> pd.DataFrame:
    """``col=lo:hi:n,col2=v,...`` to the Cartesian grid (last column fastest)."""
    axes = {}
    for part in text.split(","):
        name, sep, rng = part.partition("=")
        name = name.strip()
        if not sep or not name:
            raise CliError(f"bad grid entry {part!r}; expected col=lo:hi:n or col=value")
        bits = rng.split(":")
        try:
            if len(bits) == 1:
                axes[name] = np.array([float(bits[0])])
            elif len(bits) == 3:
                n = int(bits[2])
                if n < 1:
                    raise ValueError
                axes[name] = np.linspace(float(bits[0]), float(bits[1]), n)
            else:
                raise ValueError
        except ValueError:
            raise CliError(f"bad grid entry {part!r}; expected col=lo:hi:n or col=value") from None
    rows = list(itertools.product(*axes.values()))
    return pd.DataFrame(rows, columns=list(axes))


def _parse_fix(items) -> dict:
    fixed = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        try:
            fixed[name.strip()] = float(value)
        except ValueError:
            sep = ""
        if not sep or not name.strip():
            raise CliError(f"bad --fix {item!r}; expected col=value")
    return fixed


def cmd_predict(args, run) -> int:
    from .fitter import domain_violations, predict_frame
    from .results import FitResult

    try:
        fit = FitResult.from_json(run.read(args.fit).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise CliError(f"cannot read fit {args.fit}: {exc}") from None
    grid_path = Path(args.grid)
    if grid_path.is_file():
        grid = pd.read_csv(run.read(grid_path), float_precision="round_trip")
    else:
        grid = parse_grid(args.grid)
    fixed = _parse_fix(args.fix)
    missing = [c for c in fit.spec.variables if c not in fixed and c not in grid.columns]
    if missing:
        raise CliError(f"grid lacks column(s) {', '.join(missing)}; add them or use --fix")
    cols = {c: np.full(len(grid), fixed[c]) if c in fixed else grid[c].to_numpy(dtype=float)
            for c in fit.spec.variables}
    bad = domain_violations(fit, cols)
    if bad:
        lines = [f"  row {r + 1}: {c}={v!r} outside [{lo!r}, {hi!r}]" for r, c, v, lo, hi in bad[:20]]
        more = f"\n  ... and {len(bad) - 20} more" if len(bad) > 20 else ""
        raise CliError(f"{len(bad)} grid value(s) outside the training domain:\n"
                       + "\n".join(lines) + more)
    pred = predict_frame(fit, grid, fixed)
    out = pred[list(grid.columns) + ["rate_per_100k_py"]]
    run.write_csv(Path(args.out), out)
    run.notes.update({"fixed": fixed, "n_rows": len(out)})
    _progress(args, f"wrote {len(out)} predictions")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose


def cmd_diagnose(args, run) -> int:
    from .diagnostics import (ConstantFieldError, DiagnosticError, GraphError, acf_frame,
                              build_neighbor_graph, month_field, morans_i, temporal_acf)

    panel = _load(run, args.data)
    out = Path(args.out)
    column = args.rate_column
    if column not in panel.frame.columns:
        raise CliError(f"panel lacks column {column!r}")
    try:
        if args.month is not None:
            if args.edges is None:
                raise CliError("--month needs --edges")
            graph = build_neighbor_graph(run.read(args.edges))
            m = int(args.month) if args.month.strip().isdigit() else month_index(args.month)
            values = month_field(panel, m, column)
            res = morans_i(values, graph)
            table = pd.DataFrame({"id": list(res.neighbor_means),
                                  "value": [values[u] for u in res.neighbor_means],
                                  "neighbor_mean": list(res.neighbor_means.values())})
            run.write_csv(out / "moran.csv", table)
            run.write(out / "moran_summary.json", json.dumps(res.summary()) + "\n")
            _progress(args, f"Moran's I = {res.I:.6f} over {res.n_used} units "
                            f"({res.n_isolated} isolated)")
        else:
            summaries = temporal_acf(panel, column, args.acf_maxlag)
            run.write_csv(out / "acf.csv", acf_frame(summaries))
            units = sorted(summaries[0].per_unit_acf)
            per_unit = pd.DataFrame({"unit": units})
            for s in summaries:
                per_unit[f"lag{s.lag}"] = [s.per_unit_acf[u] for u in units]
            run.write_csv(out / "acf_units.csv", per_unit)
            _progress(args, f"ACF over {len(units)} units, {summaries[0].n_excluded} excluded")
    except ConstantFieldError as exc:
        raise CliError(f"{exc} (every unit has the same {column} in that month)",
                       EXIT_CAVEAT) from None
    except (DiagnosticError, GraphError, KeyError, ValueError) as exc:
        raise CliError(str(exc)) from None
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / demo


def cmd_simulate(args, run) -> int:
    from .data import write_panel
    from .simulate import SimConfig, SimConfigError, simulate_panel

    try:
        config = SimConfig.from_text(run.read(args.config).read_text(encoding="utf-8"))
        if args.seed is not None:
            from dataclasses import replace
            config = replace(config, seed=args.seed)
        sim = simulate_panel(config)
    except SimConfigError as exc:
        raise CliError(f"bad simulation config: {exc}") from None
    out = Path(args.out)
    path = out / "panel.csv"
    write_panel(sim.panel, path)
    run.outputs[str(path)] = sha256_file(path)
    truth = sim.truth.copy()
    truth["month"] = [month_label(m) for m in truth["month"]]
    run.write_csv(out / "truth.csv", truth)
    run.write(out / "config.txt", config.to_text())
    run.seeds["simulate"] = config.seed
    _progress(args, f"simulated {len(sim.panel)} rows from surface {config.surface}")
    return EXIT_OK


def cmd_demo_splines(args, run) -> int:
    from .simulate import spline_demo

    tables = spline_demo(args.seed)
    out = Path(args.out)
    run.write_csv(out / "demo_data.csv", tables.data)
    run.write_csv(out / "demo_basis.csv", tables.basis)
    run.write_csv(out / "demo_fit.csv", tables.fit)
    run.seeds["demo"] = args.seed
    _progress(args, "wrote spline demo tables")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbgam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nbgam {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--verbose", action="store_true", help="progress on stdout")
        return sp

    f = add("fit", "fit a model and write the FitResult JSON")
    f.add_argument("--data", required=True)
    f.add_argument("--formula", required=True)
    f.add_argument("--family", choices=[m.value for m in Family], default="nb")
    f.add_argument("--offset", default="person-years",
                   help="person-years | none | column:NAME")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit, out_is_dir=False)

    q = add("predict", "rates per 100,000 person-years on a grid")
    q.add_argument("--fit", required=True)
    q.add_argument("--grid", required=True, help="CSV file or col=lo:hi:n,col2=v,...")
    q.add_argument("--fix", action="append", metavar="COL=VALUE")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_predict, out_is_dir=False)

    d = add("diagnose", "Moran's I for one month or temporal ACF bands")
    d.add_argument("--data", required=True)
    d.add_argument("--edges")
    mode = d.add_mutually_exclusive_group(required=True)
    mode.add_argument("--month", help="YYYY-MM or month index")
    mode.add_argument("--acf-maxlag", type=int)
    d.add_argument("--rate-column", default="crude_rate")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose, out_is_dir=True)

    s = add("simulate", "draw a synthetic panel from a key=value config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate, out_is_dir=True)

    m = add("demo-splines", "B-spline basis demonstration tables")
    m.add_argument("--seed", type=int, default=20220901)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_demo_splines, out_is_dir=True)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    run = Run(argv)
    try:
        code = args.func(args, run)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = exc.code
    run.notes["exit_code"] = code
    atomic_write_text(_manifest_path(Path(args.out), args.out_is_dir),
                      json.dumps(run.manifest(), indent=1, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
