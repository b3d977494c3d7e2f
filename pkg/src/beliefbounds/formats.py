"""YAML loaders for model and scenario files.

Loading errors carry the 1-based line of the offending node so the CLI can
point at it.  The schemas are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .model import FiniteMetricSpace, PomdpModel, validate_model
from .quantize import ContinuousModelAdapter


class FormatError(ValueError):
    """Malformed model or scenario file."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}, line {line}" if line is not None else self.path
        super().__init__(f"{where}: {message}" if where else message)


class _LineDict(dict):
    line: int = 0
    key_lines: dict


class _LineList(list):
    line: int = 0


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LineList(loader.construct_object(child, deep=True) for child in node.value)
    out.line = node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def read_yaml(path) -> _LineDict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", path) from exc
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise FormatError(f"YAML syntax error: {exc.problem}", path, line) from exc
    if not isinstance(doc, dict):
        raise FormatError("top level must be a mapping", path, 1)
    return doc


class _Reader:
    """Field access on a line-annotated mapping with located errors."""

    def __init__(self, doc: dict, path, context: str = ""):
        self.doc = doc
        self.path = path
        self.context = context

    def line(self, key=None) -> Optional[int]:
        if key is not None and key in getattr(self.doc, "key_lines", {}):
            return self.doc.key_lines[key]
        return getattr(self.doc, "line", None)

    def fail(self, message: str, key=None):
        prefix = f"{self.context}.{key}" if self.context and key else (key or self.context)
        raise FormatError(f"{prefix}: {message}" if prefix else message, self.path, self.line(key))

    def has(self, key) -> bool:
        return key in self.doc and self.doc[key] is not None

    def get(self, key, default=None):
        return self.doc.get(key, default)

    def require(self, key):
        if not self.has(key):
            self.fail("missing required field", key)
        return self.doc[key]

    def sub(self, key) -> "_Reader":
        val = self.require(key)
        if not isinstance(val, dict):
            self.fail("expected a mapping", key)
        return _Reader(val, self.path, f"{self.context}.{key}" if self.context else str(key))

    def array(self, key, ndim: int, value=None) -> np.ndarray:
        val = self.require(key) if value is None else value
        try:
            arr = np.array(val, dtype=float)
        except (TypeError, ValueError):
            self.fail(f"expected a {ndim}-D array of numbers", key)
        if arr.ndim != ndim:
            self.fail(f"expected a {ndim}-D array, got {arr.ndim}-D", key)
        if not np.all(np.isfinite(arr)):
            self.fail("entries must be finite numbers", key)
        return arr

    def number(self, key, default=None, kind=float):
        if not self.has(key):
            if default is None:
                self.fail("missing required field", key)
            return default
        val = self.doc[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(f"expected a number, got {val!r}", key)
        if kind is int and int(val) != val:
            self.fail(f"expected an integer, got {val!r}", key)
        return kind(val)

    def unknown(self, allowed):
        for key in self.doc:
            if key not in allowed:
                self.fail(f"unknown field (allowed: {', '.join(sorted(allowed))})", key)


def _space(r: _Reader, key: str) -> FiniteMetricSpace:
    val = r.require(key)
    if isinstance(val, list):
        return FiniteMetricSpace.discrete(len(val), labels=[str(v) for v in val])
    s = r.sub(key)
    s.unknown({"labels", "coords", "dist"})
    labels = s.require("labels")
    if not isinstance(labels, list) or not labels:
        s.fail("expected a non-empty list", "labels")
    labels = [str(v) for v in labels]
    if s.has("coords") and s.has("dist"):
        s.fail("give either coords or dist, not both", "dist")
    if s.has("coords"):
        coords = np.array(s.require("coords"), dtype=float)
        if coords.shape[0] != len(labels) or coords.ndim not in (1, 2):
            s.fail(f"expected {len(labels)} coordinates", "coords")
        return FiniteMetricSpace.from_coordinates(coords, labels=labels)
    if s.has("dist"):
        dist = s.array("dist", 2)
        if dist.shape != (len(labels), len(labels)):
            s.fail(f"expected a {len(labels)}x{len(labels)} matrix", "dist")
        space = FiniteMetricSpace(labels=tuple(labels), dist=dist)
        problems = space.violations(key)
        if problems:
            s.fail(problems[0], "dist")
        return space
    return FiniteMetricSpace.discrete(len(labels), labels=labels)


def model_from_dict(doc: dict, path="<model>") -> PomdpModel:
    r = _Reader(doc, path)
    r.unknown({"name", "states", "actions", "observations", "kernel", "channel", "cost", "prior", "discount"})
    states = _space(r, "states")
    obs = _space(r, "observations")
    actions = r.require("actions")
    if not isinstance(actions, list) or not actions:
        r.fail("expected a non-empty list of action labels", "actions")
    actions = tuple(str(a) for a in actions)
    n, k = states.size, len(actions)

    kraw = r.require("kernel")
    if isinstance(kraw, dict):
        kr = _Reader(kraw, path, "kernel")
        for a in kraw:
            if str(a) not in actions:
                kr.fail("not a declared action", a)
        by_label = {str(a): a for a in kraw}
        mats = []
        for a in actions:
            if a not in by_label:
                kr.fail(f"no matrix for action {a!r}")
            mats.append(kr.array(by_label[a], 2))
        kernel = np.array(mats) if len({m.shape for m in mats}) == 1 else None
        if kernel is None:
            kr.fail("matrices have different shapes")
    else:
        kernel = r.array("kernel", 3)
    if kernel.shape != (k, n, n):
        r.fail(f"expected shape ({k}, {n}, {n}), got {kernel.shape}", "kernel")

    channel = r.array("channel", 2)
    if channel.shape != (n, obs.size):
        r.fail(f"expected shape ({n}, {obs.size}), got {channel.shape}", "channel")
    cost = r.array("cost", 2)
    if cost.shape != (n, k):
        r.fail(f"expected shape ({n}, {k}), got {cost.shape}", "cost")
    prior = r.array("prior", 1) if r.has("prior") else np.full(n, 1.0 / n)
    if prior.shape != (n,):
        r.fail(f"expected {n} entries", "prior")
    discount = r.number("discount") if r.has("discount") else None

    model = PomdpModel(
        state_space=states,
        action_labels=actions,
        obs_space=obs,
        kernel=kernel,
        channel=channel,
        cost=cost,
        prior=prior,
        discount=discount,
        name=str(r.get("name", Path(str(path)).stem)),
    )
    problems = validate_model(model)
    if problems:
        field_name = problems[0].split(":", 1)[0]
        line = _row_line(doc, field_name, problems[0], actions) or r.line(field_name if field_name in doc else None)
        raise FormatError(problems[0], path, line)
    return model


def _row_line(doc: dict, field_name: str, problem: str, actions: tuple) -> Optional[int]:
    """Line of the row a validation message points at, when the file has one."""
    idx = {k: int(v) for k, v in re.findall(r"(action|state)=(\d+)", problem)}
    node = doc.get(field_name)
    if node is None or "state" not in idx:
        return None
    try:
        if field_name == "kernel":
            a = idx["action"]
            if isinstance(node, dict):
                node = node[next(k for k in node if str(k) == actions[a])]
            else:
                node = node[a]
        return getattr(node[idx["state"]], "line", None)
    except (IndexError, KeyError, StopIteration, TypeError):
        return None


def load_model(path) -> PomdpModel:
    return model_from_dict(read_yaml(path), path)


def _floats(x) -> list:
    return [float(v) for v in np.ravel(x)]


def model_to_dict(model: PomdpModel) -> dict:
    """Plain-data form of a model; ``model_from_dict`` reads it back."""

    def space(s: FiniteMetricSpace):
        out: dict[str, Any] = {"labels": [str(v) for v in s.labels]}
        if s.is_line:
            out["coords"] = _floats(s.coords)
        else:
            out["dist"] = [_floats(row) for row in s.dist]
        return out

    doc = {
        "name": model.name,
        "states": space(model.state_space),
        "actions": list(model.action_labels),
        "observations": space(model.obs_space),
        "kernel": {a: [_floats(r) for r in model.kernel[i]] for i, a in enumerate(model.action_labels)},
        "channel": [_floats(r) for r in model.channel],
        "cost": [_floats(r) for r in model.cost],
        "prior": _floats(model.prior),
    }
    if model.discount is not None:
        doc["discount"] = float(model.discount)
    return doc


def dump_model(model: PomdpModel, path) -> None:
    Path(path).write_text(yaml.safe_dump(model_to_dict(model), sort_keys=False), encoding="utf-8")


# -- scenarios ---------------------------------------------------------------

PERTURBATION_KNOBS = ("channel_mix", "kernel_mix", "n_x", "n_y", "prior_shift")
SOLVER_KNOBS = ("beta", "grid_m", "tol", "horizon")
SWEEPABLE = PERTURBATION_KNOBS + SOLVER_KNOBS + ("sigma",)


@dataclass(frozen=True)
class Perturbation:
    channel_mix: float = 0.0  # epsilon_Q
    kernel_mix: float = 0.0  # epsilon_T
    blend: str = "uniform"  # "uniform" or "permutation"
    n_x: Optional[int] = None
    n_y: Optional[int] = None
    prior_shift: float = 0.0  # epsilon_mu


@dataclass(frozen=True)
class SolverSettings:
    beta: float = 0.9
    grid_m: int = 10
    tol: float = 1e-8
    snap: str = "L1"
    horizon: int = 5  # finite-horizon check
    rollouts: int = 400


@dataclass(frozen=True)
class Scenario:
    name: str
    model: Optional[PomdpModel] = None
    adapter: Optional[ContinuousModelAdapter] = None
    perturbation: Perturbation = field(default_factory=Perturbation)
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0
    bounds: Optional[tuple] = None  # restrict to these bound ids

    def __post_init__(self):
        if (self.model is None) == (self.adapter is None):
            raise ValueError("a scenario needs exactly one true-model source")


def _check_unit(r: _Reader, key, value):
    if not 0.0 <= value <= 1.0:
        r.fail(f"must lie in [0, 1], got {value!r}", key)
    return value


def scenario_from_dict(doc: dict, path="<scenario>") -> Scenario:
    r = _Reader(doc, path)
    r.unknown({"name", "model", "adapter", "perturbation", "solver", "seed", "bounds"})
    if r.has("model") == r.has("adapter"):
        r.fail("give exactly one of 'model' (file path) or 'adapter'", "model" if r.has("model") else None)
    model = adapter = None
    if r.has("model"):
        src = r.require("model")
        if isinstance(src, dict):
            model = model_from_dict(src, path)
        else:
            target = Path(str(path)).parent / str(src)
            model = load_model(target)
    else:
        a = r.sub("adapter")
        allowed = {
            "kind", "sigma", "drifts", "domain", "fine_grid_size", "obs_sigma",
            "obs_slope", "obs_offset", "obs_domain", "obs_grid_size", "nodes",
        }
        a.unknown(allowed)
        kw: dict[str, Any] = {}
        for key in ("sigma", "obs_sigma", "obs_slope", "obs_offset"):
            if a.has(key):
                kw[key] = a.number(key)
        for key in ("fine_grid_size", "obs_grid_size", "nodes"):
            if a.has(key):
                kw[key] = a.number(key, kind=int)
        for key, size in (("drifts", None), ("domain", 2), ("obs_domain", 2)):
            if a.has(key):
                arr = a.array(key, 1)
                if size is not None and arr.shape != (size,):
                    a.fail(f"expected {size} numbers", key)
                kw[key] = tuple(float(v) for v in arr)
        if a.has("kind"):
            kw["kind"] = str(a.get("kind"))
        adapter = ContinuousModelAdapter(**kw)
        problems = adapter.violations()
        if problems:
            a.fail(problems[0])

    pert = Perturbation()
    if r.has("perturbation"):
        p = r.sub("perturbation")
        p.unknown({"channel_mix", "kernel_mix", "blend", "n_x", "n_y", "prior_shift"})
        blend = str(p.get("blend", "uniform"))
        if blend not in ("uniform", "permutation"):
            p.fail("expected 'uniform' or 'permutation'", "blend")
        n_x = p.number("n_x", kind=int) if p.has("n_x") else None
        n_y = p.number("n_y", kind=int) if p.has("n_y") else None
        for key, v in (("n_x", n_x), ("n_y", n_y)):
            if v is not None and v < 1:
                p.fail("must be a positive integer", key)
        pert = Perturbation(
            channel_mix=_check_unit(p, "channel_mix", p.number("channel_mix", 0.0)),
            kernel_mix=_check_unit(p, "kernel_mix", p.number("kernel_mix", 0.0)),
            blend=blend,
            n_x=n_x,
            n_y=n_y,
            prior_shift=_check_unit(p, "prior_shift", p.number("prior_shift", 0.0)),
        )
        if (n_x is not None or n_y is not None) and adapter is None:
            p.fail("quantization needs an adapter model source", "n_x" if n_x is not None else "n_y")

    solver = SolverSettings()
    if r.has("solver"):
        s = r.sub("solver")
        s.unknown({"beta", "grid_m", "tol", "snap", "horizon", "rollouts"})
        d = SolverSettings()
        snap = str(s.get("snap", d.snap))
        if snap not in ("L1", "W1"):
            s.fail("expected 'L1' or 'W1'", "snap")
        solver = SolverSettings(
            beta=s.number("beta", d.beta),
            grid_m=s.number("grid_m", d.grid_m, kind=int),
            tol=s.number("tol", d.tol),
            snap=snap,
            horizon=s.number("horizon", d.horizon, kind=int),
            rollouts=s.number("rollouts", d.rollouts, kind=int),
        )
        if not 0.0 < solver.beta < 1.0:
            s.fail(f"must lie in (0, 1), got {solver.beta!r}", "beta")
        if solver.grid_m < 1 or solver.tol <= 0 or solver.horizon < 1 or solver.rollouts < 2:
            s.fail("grid_m >= 1, tol > 0, horizon >= 1 and rollouts >= 2 are required")

    bounds = None
    if r.has("bounds"):
        from .bounds import BOUND_IDS

        vals = r.require("bounds")
        if not isinstance(vals, list):
            r.fail("expected a list of bound ids", "bounds")
        for v in vals:
            if v not in BOUND_IDS:
                r.fail(f"unknown bound id {v!r}", "bounds")
        bounds = tuple(vals)

    seed = r.number("seed", 0, kind=int)
    if seed < 0:
        r.fail("must be nonnegative", "seed")
    return Scenario(
        name=str(r.get("name", Path(str(path)).stem)),
        model=model,
        adapter=adapter,
        perturbation=pert,
        solver=solver,
        seed=seed,
        bounds=bounds,
    )


def load_scenario(path) -> Scenario:
    return scenario_from_dict(read_yaml(path), path)
