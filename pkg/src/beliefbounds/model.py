"""Finite POMDP domain types, validation and regularity constants.

Array conventions used throughout the package:

* ``kernel[u, x, x1]`` is the probability of moving from state ``x`` to ``x1``
  under action ``u``.
* ``channel[x, y]`` is the probability of observing ``y`` in state ``x``;
  the channel does not depend on the action.
* ``cost[x, u]`` is the one-stage cost.
* Beliefs are plain 1-D probability vectors over states.

Total variation is always the L1 norm of the difference (mass up to 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

ROW_TOL = 1e-12
METRIC_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMetricSpace:
    """Labelled points with an explicit distance matrix.

    ``coords`` is kept when the space was built from 1-D coordinates; the
    metrics module uses it for the closed-form transport on the line.
    """

    labels: tuple
    dist: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        dist = np.array(self.dist, dtype=float)
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)
        if self.coords is not None:
            coords = np.array(self.coords, dtype=float)
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)

    @classmethod
    def from_coordinates(cls, coords, labels: Optional[Sequence] = None) -> "FiniteMetricSpace":
        pts = np.asarray(coords, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
        if labels is None:
            labels = [str(i) for i in range(len(pts))]
        line = pts[:, 0] if pts.shape[1] == 1 else None
        return cls(labels=tuple(labels), dist=dist, coords=line)

    @classmethod
    def discrete(cls, n: int, labels: Optional[Sequence] = None) -> "FiniteMetricSpace":
        """Uniform 0/1 metric on ``n`` points."""
        dist = 1.0 - np.eye(n)
        if labels is None:
            labels = [str(i) for i in range(n)]
        return cls(labels=tuple(labels), dist=dist)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.size else 0.0

    @property
    def is_line(self) -> bool:
        return self.coords is not None

    def violations(self, name: str = "space") -> list[str]:
        d = self.dist
        n = self.size
        out = []
        if d.shape != (n, n):
            return [f"{name}: dist has shape {d.shape}, expected ({n}, {n})"]
        if not np.all(np.isfinite(d)):
            out.append(f"{name}: dist has non-finite entries")
            return out
        for i in range(n):
            if abs(d[i, i]) > METRIC_TOL:
                out.append(f"{name}: dist[{i}][{i}] = {d[i, i]!r} is not 0")
        neg = np.argwhere(d < -METRIC_TOL)
        for i, j in neg:
            out.append(f"{name}: dist[{i}][{j}] = {d[i, j]!r} is negative")
        asym = np.argwhere(np.abs(d - d.T) > METRIC_TOL)
        for i, j in asym:
            if i < j:
                out.append(f"{name}: dist not symmetric at ({i},{j}): {d[i, j]!r} vs {d[j, i]!r}")
        # d[i,k] <= d[i,j] + d[j,k] for every triple
        slack = d[:, None, :] - d[:, :, None] - d[None, :, :]
        bad = np.argwhere(slack > 1e-9 * max(1.0, self.diameter))
        for i, j, k in bad[:10]:
            out.append(f"{name}: triangle inequality fails for ({i},{j},{k})")
        return out


def _row_violations(rows: np.ndarray, what: str, index_names: Sequence[str]) -> list[str]:
    out = []
    if not np.all(np.isfinite(rows)):
        return [f"{what}: non-finite entries"]
    for idx in np.argwhere(rows < 0):
        where = ", ".join(f"{n}={v}" for n, v in zip(index_names, idx[:-1]))
        out.append(f"{what}: negative probability at ({where}, col={idx[-1]})")
    sums = rows.sum(axis=-1)
    for idx in np.argwhere(np.abs(sums - 1.0) > ROW_TOL):
        where = ", ".join(f"{n}={v}" for n, v in zip(index_names, idx))
        out.append(f"{what}: row ({where}) sums to {float(sums[tuple(idx)])!r}")
    return out


@dataclass(frozen=True)
class PomdpModel:
    state_space: FiniteMetricSpace
    action_labels: tuple
    obs_space: FiniteMetricSpace
    kernel: np.ndarray
    channel: np.ndarray
    cost: np.ndarray
    prior: np.ndarray
    discount: Optional[float] = None
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "action_labels", tuple(self.action_labels))
        for attr in ("kernel", "channel", "cost", "prior"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def n_states(self) -> int:
        return self.state_space.size

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    @property
    def n_obs(self) -> int:
        return self.obs_space.size

    @property
    def cost_sup(self) -> float:
        return float(np.abs(self.cost).max())

    def with_(self, **changes) -> "PomdpModel":
        return replace(self, **changes)


def validate_model(model: PomdpModel) -> list[str]:
    """Return every invariant violation of ``model``; an empty list means valid."""
    out = []
    out += model.state_space.violations("state_space")
    out += model.obs_space.violations("obs_space")
    n, a, m = model.n_states, model.n_actions, model.n_obs
    if a == 0:
        out.append("actions: at least one action is required")
    if model.kernel.shape != (a, n, n):
        out.append(f"kernel: shape {model.kernel.shape}, expected ({a}, {n}, {n})")
    else:
        out += _row_violations(model.kernel, "kernel", ("action", "state"))
    if model.channel.shape != (n, m):
        out.append(f"channel: shape {model.channel.shape}, expected ({n}, {m})")
    else:
        out += _row_violations(model.channel, "channel", ("state",))
    if model.cost.shape != (n, a):
        out.append(f"cost: shape {model.cost.shape}, expected ({n}, {a})")
    elif not np.all(np.isfinite(model.cost)):
        out.append("cost: non-finite entries")
    if model.prior.shape != (n,):
        out.append(f"prior: shape {model.prior.shape}, expected ({n},)")
    else:
        out += _row_violations(model.prior[None, :], "prior", ())
    if model.discount is not None and not (0.0 < model.discount < 1.0):
        out.append(f"discount: {model.discount!r} not in (0, 1)")
    return out


@dataclass(frozen=True)
class ModelConstants:
    alpha: float
    theta: float
    l_q: float
    k1: float
    dobrushin_q: float
    diameter: float
    k2: float
    alpha_y: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "theta": self.theta,
            "l_q": self.l_q,
            "k1": self.k1,
            "dobrushin_q": self.dobrushin_q,
            "diameter": self.diameter,
            "k2": self.k2,
            "alpha_y": self.alpha_y,
        }


def _pairwise_lipschitz(rows: np.ndarray, dist: np.ndarray, row_dist) -> float:
    """max over x != x' of row_dist(rows[x], rows[x']) / dist[x, x'].

    ``rows`` has shape (n, k); ``row_dist(a, B)`` returns distances from row
    ``a`` to each row of ``B``.
    """
    n = rows.shape[0]
    best = 0.0
    for x in range(n - 1):
        others = np.arange(x + 1, n)
        d = dist[x, others]
        vals = row_dist(rows[x], rows[others])
        ok = d > 0
        if np.any(ok):
            best = max(best, float(np.max(vals[ok] / d[ok])))
    return best


def derive_constants(model: PomdpModel, alpha_y: Optional[float] = None) -> ModelConstants:
    """Regularity constants of ``model`` by exhaustive pair enumeration."""
    from . import metrics
    from .bounds import k2_wasserstein

    space = model.state_space
    dist = space.dist
    tv_rows = lambda a, B: np.abs(B - a).sum(axis=1)  # noqa: E731

    if space.size < 2:
        alpha = theta = l_q = k1 = 0.0
        dob = 1.0
    else:
        alpha = max(_pairwise_lipschitz(model.kernel[u], dist, tv_rows) for u in range(model.n_actions))

        def w1_rows(a, B):
            if space.is_line:
                return metrics.w1_line_rows(a, B, space.coords)
            return np.array([metrics.w1_distance(a, b, space) for b in B])

        theta = max(_pairwise_lipschitz(model.kernel[u], dist, w1_rows) for u in range(model.n_actions))
        l_q = _pairwise_lipschitz(model.channel, dist, tv_rows)
        abs_rows = lambda a, B: np.abs(B - a).max(axis=1)  # noqa: E731
        k1 = _pairwise_lipschitz(model.cost, dist, abs_rows)
        dob = metrics.dobrushin(model.channel)
    diameter = space.diameter
    return ModelConstants(
        alpha=alpha,
        theta=theta,
        l_q=l_q,
        k1=k1,
        dobrushin_q=dob,
        diameter=diameter,
        k2=k2_wasserstein(alpha, diameter, dob),
        alpha_y=alpha_y,
    )
