"""Certify approximation bounds for finite POMDPs from the command line.

Exit codes: 0 all applicable bounds pass, 1 a bound failed, 2 malformed
input (or a pipeline stage that rejected it), 3 incompatible models,
4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, pipeline, reports, solver
from .belief import belief_grid
from .formats import SWEEPABLE, FormatError, load_model, load_scenario, model_from_dict, scenario_from_dict, read_yaml
from .model import PomdpModel

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INCOMPATIBLE, EXIT_NONCONVERGENCE = 0, 1, 2, 3, 4


class Incompatible(ValueError):
    pass


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--out", default=d("beliefbounds-out"), help="output directory (default: beliefbounds-out)")
    p.add_argument("--seed", type=int, default=d(None), help="override the scenario seed")
    p.add_argument("--grid-m", type=int, default=d(None), help="belief grid resolution m")
    p.add_argument("--tol", type=float, default=d(None), help="solver tolerance")
    p.add_argument("--format", choices=("jsonl", "csv", "both"), default=d("both"), help="report format")
    p.add_argument("--timings", action="store_true", default=d(False), help="add stage timings to reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefbounds", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("distance", parents=[common], help="uniform kernel and channel distances between two models")
    p.add_argument("model_a")
    p.add_argument("model_b")
    p.add_argument("--metric", choices=("TV", "W1", "BL", "all"), default="all")

    p = sub.add_parser("verify", parents=[common], help="certify every bound on a scenario")
    p.add_argument("scenario")

    p = sub.add_parser("solve", parents=[common], help="discounted value iteration on the belief grid")
    p.add_argument("model")
    p.add_argument("--beta", type=float, default=None, help="discount factor (default: the model's)")

    p = sub.add_parser("sweep", parents=[common], help="verify a scenario across values of one knob")
    p.add_argument("scenario")
    p.add_argument("parameter", choices=SWEEPABLE)
    p.add_argument("values", nargs="+")

    p = sub.add_parser("validate", parents=[common], help="check a model or scenario file")
    p.add_argument("path")
    return parser


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


# -- distance ------------------------------------------------------------------


def _check_compatible(a: PomdpModel, b: PomdpModel):
    for what, x, y in (
        ("states", a.n_states, b.n_states),
        ("actions", a.n_actions, b.n_actions),
        ("observations", a.n_obs, b.n_obs),
    ):
        if x != y:
            raise Incompatible(f"models have different numbers of {what}: {x} vs {y}")
    if not np.allclose(a.state_space.dist, b.state_space.dist):
        raise Incompatible("models have different state-space metrics")
    if not np.allclose(a.obs_space.dist, b.obs_space.dist):
        raise Incompatible("models have different observation-space metrics")


def distance_table(a: PomdpModel, b: PomdpModel, which=("TV", "W1", "BL")) -> list[dict]:
    _check_compatible(a, b)
    rows = []
    for target, fa, fb, ground in (
        ("kernel", a.kernel, b.kernel, a.state_space),
        ("channel", a.channel, b.channel, a.obs_space),
    ):
        for m in which:
            if target == "kernel":
                val = metrics.kernel_distance(fa, fb, m, ground)
            else:
                val = metrics.channel_distance(fa, fb, m, ground)
            rows.append({"schema_version": reports.SCHEMA_VERSION, "target": target, "metric": m, "distance": val})
    return rows


def cmd_distance(args) -> int:
    a = load_model(args.model_a)
    b = load_model(args.model_b)
    which = ("TV", "W1", "BL") if args.metric == "all" else (args.metric,)
    rows = distance_table(a, b, which)
    print(f"{'':<8}" + "".join(f"{m:>14}" for m in which))
    for target in ("kernel", "channel"):
        vals = [r["distance"] for r in rows if r["target"] == target]
        print(f"{target:<8}" + "".join(f"{v:>14.6g}" for v in vals))
    reports.write_rows(rows, args.out, "distance", args.format, columns=("schema_version", "target", "metric", "distance"))
    return EXIT_OK


# -- verify / sweep ------------------------------------------------------------


def _apply_overrides(scn, args):
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)
    return scn


def cmd_verify(args) -> int:
    scn = _apply_overrides(load_scenario(args.scenario), args)
    result = pipeline.run_verify(scn, grid_m=args.grid_m, tol=args.tol, timings=args.timings)
    rows = [reports.report_row(r) for r in result.reports]
    reports.write_rows(rows, args.out, "reports", args.format)
    reports.write_json(result.context, Path(args.out) / "context.json")
    print(f"scenario {scn.name}")
    print(reports.summary_table(rows))
    n_fail = len(result.failed)
    print(f"{len(rows) - n_fail}/{len(rows)} pass or n/a")
    return EXIT_FAIL if n_fail else EXIT_OK


def _parse_value(parameter: str, text: str):
    if parameter in ("n_x", "n_y", "grid_m", "horizon"):
        return int(text)
    return float(text)


def with_knob(scn, parameter: str, value):
    if parameter in ("channel_mix", "kernel_mix", "n_x", "n_y", "prior_shift"):
        return replace(scn, perturbation=replace(scn.perturbation, **{parameter: value}))
    if parameter in ("beta", "grid_m", "tol", "horizon"):
        return replace(scn, solver=replace(scn.solver, **{parameter: value}))
    if parameter == "sigma":
        if scn.adapter is None:
            raise FormatError("sweeping sigma needs an adapter model source")
        return replace(scn, adapter=replace(scn.adapter, sigma=value))
    raise FormatError(f"{parameter!r} is not a scenario knob")


# finer quantization should never raise these right-hand sides
REFINEMENT_KNOBS = {"n_x": ("QUANT_STATE", "JOINT_FILTER_W1", "JOINT_DISC", "JOINT_AVG"), "n_y": ("QUANT_OBS_TV", "OBS_VALUE", "JOINT_FILTER_W1", "JOINT_DISC", "JOINT_AVG")}


def monotone_decay(rows: list, parameter: str) -> dict:
    """For refinement knobs, whether each quantization rhs is nonincreasing in the knob."""
    out = {}
    for bid in REFINEMENT_KNOBS.get(parameter, ()):
        seq = sorted((r["value"], r["rhs"]) for r in rows if r["bound_id"] == bid)
        if len(seq) < 2:
            continue
        vals = [float(v) for _, v in seq]
        out[bid] = all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    return out


def cmd_sweep(args) -> int:
    scn = _apply_overrides(load_scenario(args.scenario), args)
    try:
        values = [_parse_value(args.parameter, v) for v in args.values]
    except ValueError as exc:
        raise FormatError(f"bad sweep value: {exc}") from exc
    rows = []
    for v in values:
        variant = with_knob(scn, args.parameter, v)
        if args.parameter == "grid_m":
            result = pipeline.run_verify(variant, tol=args.tol, timings=args.timings)
        else:
            result = pipeline.run_verify(variant, grid_m=args.grid_m, tol=args.tol, timings=args.timings)
        rows += [reports.report_row(r, {"parameter": args.parameter, "value": v}) for r in result.reports]
    cols = reports.CSV_COLUMNS[:2] + ("parameter", "value") + reports.CSV_COLUMNS[2:]
    reports.write_rows(rows, args.out, "sweep", args.format, columns=cols)
    decay = monotone_decay(rows, args.parameter)
    reports.write_json({"parameter": args.parameter, "values": values, "rhs_nonincreasing": decay}, Path(args.out) / "sweep_summary.json")
    n_fail = sum(1 for r in rows if r["status"] == "fail")
    print(f"sweep {args.parameter}: {len(values)} values, {len(rows)} rows, {n_fail} failures")
    for bid, ok in decay.items():
        print(f"  rhs of {bid} nonincreasing: {ok}")
    return EXIT_FAIL if n_fail or not all(decay.values()) else EXIT_OK


# -- solve / validate ------------------------------------------------------------


def cmd_solve(args) -> int:
    model = load_model(args.model)
    beta = args.beta if args.beta is not None else model.discount
    if beta is None:
        raise FormatError("no discount factor: give --beta or set 'discount' in the model", args.model)
    if not 0.0 < beta < 1.0:
        raise FormatError(f"beta must lie in (0, 1), got {beta!r}")
    m = args.grid_m or 10
    tol = args.tol or 1e-8
    grid = belief_grid(model.n_states, m)
    bmdp = solver.build_belief_mdp(model, grid)
    vf, policy = solver.value_iteration(bmdp, beta, tol)
    cols = [f"z[{lab}]" for lab in model.state_space.labels] + ["value", "action"]
    lines = [",".join(["index"] + cols)]
    for i, (z, v, u) in enumerate(zip(grid.beliefs, vf.values, policy)):
        lines.append(",".join([str(i)] + [repr(float(x)) for x in z] + [repr(float(v)), str(model.action_labels[u])]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "value.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    idx, _ = solver.snap_to_grid(model.prior, grid)
    gi = int(idx[0])
    reports.write_json(
        {
            "schema_version": reports.SCHEMA_VERSION,
            "model": model.name,
            "beta": beta,
            "grid_m": m,
            "tol": tol,
            "iterations": vf.iterations,
            "residual": vf.residual,
            "grid_defect": bmdp.grid_defect,
            "prior_grid_index": gi,
            "value_at_prior": float(vf.values[gi]),
            "action_at_prior": str(model.action_labels[policy[gi]]),
        },
        out / "solve.json",
    )
    print(f"J*_beta at prior (grid point {gi}): {vf.values[gi]:.10g}  action {model.action_labels[policy[gi]]}")
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = read_yaml(args.path)
    if "states" in doc:
        model_from_dict(doc, args.path)
        print(f"{args.path}: valid model")
    else:
        scenario_from_dict(doc, args.path)
        print(f"{args.path}: valid scenario")
    return EXIT_OK


COMMANDS = {
    "distance": cmd_distance,
    "verify": cmd_verify,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FormatError as exc:
        _err(str(exc))
        return EXIT_PARSE
    except Incompatible as exc:
        _err(str(exc))
        return EXIT_INCOMPATIBLE
    except solver.NonConvergence as exc:
        _err(f"{exc} {exc.diagnostics}")
        return EXIT_NONCONVERGENCE
    except pipeline.PipelineError as exc:
        if isinstance(exc.cause, solver.NonConvergence):
            _err(str(exc))
            return EXIT_NONCONVERGENCE
        if isinstance(exc.cause, metrics.MetricError):
            _err(str(exc))
            return EXIT_INCOMPATIBLE
        _err(str(exc))
        return EXIT_PARSE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
