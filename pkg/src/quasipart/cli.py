"""Command-line interface.

Every output carries the exact command line that reproduces it: CSV files in
``#`` comment lines at the top, JSON documents under the ``reproduce`` key.
Outputs contain no timestamps, so the same command and seed give the same
bytes.  Exit status 1 means bad input, 2 means a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import shlex
import sys
import warnings
from typing import Sequence

import numpy as np

from . import decision, density, estimation, transport

DEFAULT_SEED = 0
_DEFAULTS = {
    "seed": DEFAULT_SEED,
    "n_min": 1,
    "n_max": 4,
    "restarts": 8,
    "grid_resolution": 200,
    "bins": 8,
    "significance": 0.01,
    "trials": 20,
    "method": "quadrature",
    "rule": "optimal",
    "max_lp_points": 1000,
    "model": [],
}
_LIST_FLAGS = {"model"}


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------


def _num(v) -> str:
    return repr(float(v))


def read_points(path) -> np.ndarray:
    """Numeric CSV, one observation per row; a non-numeric first row is a header."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise InputError(f"--input: cannot read {path}: {exc.strerror}") from None
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise InputError(f"--input: {path} contains no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"--input: row {i + 1} has {len(row)} columns, expected {width}")
        for j, v in enumerate(row):
            try:
                x = float(v)
            except ValueError:
                raise InputError(f"--input: row {i + 1}, column {j + 1}: not a number: {v!r}") from None
            if not math.isfinite(x):
                raise InputError(f"--input: row {i + 1}, column {j + 1}: non-finite value {v!r}")
            out[i, j] = x
    return out


def _reproduce(argv: Sequence[str]) -> str:
    return " ".join(shlex.quote(a) for a in ["quasipart", *argv])


def _write(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"--output: cannot write {path}: {exc.strerror}") from None


def _csv_text(argv, header: Sequence[str], rows, notes: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    buf.write(f"# reproduce: {_reproduce(argv)}\n")
    for note in notes:
        buf.write(f"# {note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _json_text(argv, doc: dict) -> str:
    return json.dumps({"reproduce": _reproduce(argv), **doc}, indent=2) + "\n"


def _load_models(paths) -> list[density.MixtureModel]:
    if not paths:
        raise InputError("--model: at least one model file is required")
    out = []
    for i, p in enumerate(paths):
        try:
            out.append(density.load_model(p))
        except OSError as exc:
            raise InputError(f"--model[{i}]: cannot read {p}: {exc.strerror}") from None
        except density.ModelValidationError as exc:
            raise InputError(f"--model[{i}] ({p}): {exc}") from None
    return out


def _family_and_weights(args):
    models = _load_models(args.model)
    if len(models) < 2:
        raise InputError("--model: give one model file per hypothesis (at least two)")
    if len({m.dim for m in models}) > 1:
        raise InputError("--model: hypotheses differ in dimension")
    family = decision.HypothesisFamily(models)
    if args.weights is None:
        weights = decision.WeightMatrix.unit(len(models))
    else:
        try:
            weights = decision.WeightMatrix.load(args.weights)
        except OSError as exc:
            raise InputError(f"--weights: cannot read {args.weights}: {exc.strerror}") from None
        except (ValueError, json.JSONDecodeError) as exc:
            raise InputError(f"--weights: {exc}") from None
    if weights.n_hypotheses != len(models):
        raise InputError(f"--weights: matrix is {weights.n_hypotheses}x{weights.n_hypotheses}, "
                         f"but {len(models)} models were given")
    return family, weights


def _parse_bounds(text, d):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != d:
        raise InputError(f"--bounds: expected {d} comma-separated lo:hi pairs, got {text!r}")
    out = []
    for j, part in enumerate(parts):
        try:
            lo, hi = (float(v) for v in part.split(":"))
        except ValueError:
            raise InputError(f"--bounds[{j}]: expected lo:hi, got {part!r}") from None
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            raise InputError(f"--bounds[{j}]: need finite lo < hi, got {part!r}")
        out.append((lo, hi))
    return out


def _require(args, name):
    if getattr(args, name) is None:
        raise InputError(f"--{name.replace('_', '-')}: required for '{args.command}'")
    return getattr(args, name)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args, argv):
    X = read_points(_require(args, "input"))
    try:
        config = estimation.FitConfig(n_range=(args.n_min, args.n_max), restarts=args.restarts,
                                      seed=args.seed, atom_detection=args.atom_detection)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            result = estimation.fit(X, config)
        except estimation.FitError as exc:
            raise NumericalError(str(exc)) from None
    doc = density.model_to_dict(result.model)
    doc["fit"] = result.to_dict()
    _write(args.output, _json_text(argv, doc))


def cmd_classify(args, argv):
    family, weights = _family_and_weights(args)
    X = read_points(_require(args, "input"))
    if X.shape[1] != family.dim:
        raise InputError(f"--input: points have {X.shape[1]} columns, models have dimension {family.dim}")
    rule = decision.optimal_rule(weights, family)
    labels = rule.labels(X)
    G = decision.cost_table(weights, family, X)
    d, L = family.dim, weights.n_hypotheses
    header = [f"x_{j + 1}" for j in range(d)] + ["label"] + [f"g_{i}" for i in range(L)]
    rows = ([*map(float, x), int(lab), *map(float, g)] for x, lab, g in zip(X, labels, G))
    _write(args.output, _csv_text(argv, header, rows))


def _rule_from_arg(text, weights, family):
    if text == "optimal":
        return decision.optimal_rule(weights, family)
    if text.startswith("constant:"):
        try:
            label = int(text.split(":", 1)[1])
        except ValueError:
            raise InputError(f"--rule: bad label in {text!r}") from None
        if not 0 <= label < weights.n_hypotheses:
            raise InputError(f"--rule: label {label} out of range")
        return decision.DecisionRule.constant(label, weights.n_hypotheses, family.dim)
    raise InputError(f"--rule: expected 'optimal' or 'constant:<label>', got {text!r}")


def cmd_risk(args, argv):
    family, weights = _family_and_weights(args)
    rule = _rule_from_arg(args.rule, weights, family)
    if args.method == "quadrature":
        if family.dim > 3:
            raise InputError("--method quadrature supports dimension <= 3; use monte-carlo")
        report = decision.risk_quadrature(weights, family, rule)
    elif args.method == "monte-carlo":
        n = args.n if args.n is not None else 100_000
        if n < 100:
            raise InputError("--n: Monte Carlo needs at least 100 draws per hypothesis")
        report = decision.risk_monte_carlo(weights, family, rule, n, seed=args.seed)
    else:
        raise InputError(f"--method: expected 'quadrature' or 'monte-carlo', got {args.method!r}")
    _write(args.output, _json_text(argv, {"risk": report.to_dict()}))
    if args.output not in (None, "-"):
        stem = args.output[:-5] if args.output.endswith(".json") else args.output
        _write(stem + ".csv", _csv_text(argv, ["i", "k", "alpha", "stderr"], report.csv_rows()))


def cmd_grid_lp(args, argv):
    family, weights = _family_and_weights(args)
    bounds = _parse_bounds(args.bounds, family.dim)
    try:
        grid, costs = transport.discretize(weights, family, bounds, args.grid_resolution)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    integer = transport.integer_assignment(grid, costs)
    z_int = transport.discrete_objective(grid, costs, integer)
    notes = [f"argmin_objective: {_num(z_int)}"]
    lp_labels = None
    if grid.size <= args.max_lp_points:
        try:
            lp = transport.solve_assignment_lp(grid, costs)
        except transport.LPError as exc:
            raise NumericalError(str(exc)) from None
        z_lp = transport.discrete_objective(grid, costs, lp)
        lp_labels = lp.labels
        rel = abs(z_lp - z_int) / max(abs(z_int), np.finfo(float).tiny)
        mism = int(np.count_nonzero(lp_labels != integer.labels))
        notes += [f"lp_objective: {_num(z_lp)}", f"lp_relative_difference: {_num(rel)}",
                  f"lp_label_mismatches: {mism}"]
    else:
        notes.append(f"lp_objective: skipped ({grid.size} points exceeds --max-lp-points)")
    d = family.dim
    header = [f"x_{j + 1}" for j in range(d)] + ["label", "min_cost"]
    if lp_labels is not None:
        header.append("lp_label")
    mins = costs.min(axis=1)
    rows = []
    for r in range(grid.size):
        row = [*map(float, grid.points[r]), int(integer.labels[r]), float(mins[r])]
        if lp_labels is not None:
            row.append(int(lp_labels[r]))
        rows.append(row)
    _write(args.output, _csv_text(argv, header, rows, notes))


def cmd_simulate(args, argv):
    if len(args.model) != 1:
        raise InputError("--model: simulate takes exactly one model")
    (model,) = _load_models(args.model)
    n = _require(args, "n")
    if n < 1:
        raise InputError(f"--n: must be >= 1, got {n}")
    X = density.sample(model, n, args.seed)
    header = [f"x_{j + 1}" for j in range(model.dim)]
    _write(args.output, _csv_text(argv, header, ([*map(float, x)] for x in X)))


def cmd_recovery(args, argv):
    models = _load_models(args.model)
    if len(models) != 1:
        raise InputError("--model: recovery takes exactly one true model")
    sizes = args.sizes or ([args.n] if args.n is not None else None)
    if not sizes:
        raise InputError("--sizes: give sample sizes, e.g. --sizes 200,1000,5000")
    try:
        config = estimation.FitConfig(n_range=(args.n_min, args.n_max), restarts=args.restarts)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    table = estimation.recovery_experiment(models[0], sizes, args.trials, seed=args.seed, config=config)
    notes = [f"n={n}: n_hat correct in {h} of {args.trials} trials" for n, h in table.hits().items()]
    rows = ([r.n, r.trial, r.n_hat, float(r.sqrt_n_dev)] for r in table.rows)
    _write(args.output, _csv_text(argv, ["n", "trial", "n_hat", "sqrt_n_dev"], rows, notes))


def cmd_polar_test(args, argv):
    X = read_points(_require(args, "input"))
    try:
        res = estimation.polar_independence_test(X, args.bins, args.significance)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    doc = {"polar_test": {"statistic": res.statistic, "p_value": res.p_value, "dof": res.dof,
                          "significance": res.significance, "reject": res.reject,
                          "table": res.table.tolist()}}
    _write(args.output, _json_text(argv, doc))


COMMANDS = {
    "fit": cmd_fit,
    "classify": cmd_classify,
    "risk": cmd_risk,
    "grid-lp": cmd_grid_lp,
    "simulate": cmd_simulate,
    "recovery": cmd_recovery,
    "polar-test": cmd_polar_test,
}


def _sizes(text):
    try:
        out = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in out):
        raise argparse.ArgumentTypeError("sample sizes must be positive")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quasipart", description="Quasi-Gaussian mixtures and optimal multi-hypothesis decisions.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file supplying any flag (keys as long flag names); flags override it")
    p.add_argument("--input")
    p.add_argument("--model", action="append", default=None, help="model JSON; repeat once per hypothesis")
    p.add_argument("--weights", help="JSON {\"v\": [[...], ...]}; defaults to unit weights")
    p.add_argument("--output", help="output path (default: stdout)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--sizes", type=_sizes, help="comma-separated sample sizes for recovery")
    p.add_argument("--trials", type=int)
    p.add_argument("--grid-resolution", type=int)
    p.add_argument("--bounds", help="per-axis lo:hi pairs joined by commas")
    p.add_argument("--max-lp-points", type=int)
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--atom-detection", action="store_true", default=None)
    p.add_argument("--method")
    p.add_argument("--rule")
    p.add_argument("--bins", type=int)
    p.add_argument("--significance", type=float)
    return p


def _apply_config(args, parser):
    if args.config is None:
        doc = {}
    else:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise InputError(f"--config: cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"--config: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError("--config: expected a JSON object")
    known = {a.dest for a in parser._actions} - {"help", "command", "config"}
    for key, value in doc.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known:
            raise InputError(f"--config: unknown key {key!r}")
        if getattr(args, dest) is None:
            if dest in _LIST_FLAGS and not isinstance(value, list):
                value = [value]
            if dest == "sizes" and isinstance(value, str):
                value = _sizes(value)
            setattr(args, dest, value)
    for dest, value in _DEFAULTS.items():
        if getattr(args, dest) is None:
            setattr(args, dest, value)
    if args.atom_detection is None:
        args.atom_detection = False


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args, parser)
        COMMANDS[args.command](args, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (density.ModelValidationError, decision.RuleValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, estimation.FitError, transport.LPError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
