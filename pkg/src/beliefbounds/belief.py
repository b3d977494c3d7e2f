"""Exact Bayes filter and the belief-MDP filter kernel.

The filter kernel at ``(z, u)`` is a finitely supported measure over beliefs:
one posterior per observation with positive predictive probability, weighted
by that probability.  Uniform distances between filter kernels are estimated
as a maximum over a simplex grid, which is a lower bound on the true supremum
over all beliefs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Literal, NamedTuple, Sequence

import numpy as np

from . import metrics
from .model import FiniteMetricSpace, PomdpModel

MERGE_TOL = 1e-12


class ImpossibleObservation(ValueError):
    pass


@dataclass(frozen=True)
class FilterKernelValue:
    posteriors: np.ndarray  # (k, n_states)
    weights: np.ndarray  # (k,)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class BeliefGrid:
    beliefs: np.ndarray  # (g, n_states)
    resolution: int

    def __len__(self):
        return len(self.beliefs)

    @property
    def n_states(self) -> int:
        return self.beliefs.shape[1]


class FilterDistance(NamedTuple):
    value: float
    belief: np.ndarray
    action: int
    grid_index: int


def prediction(model: PomdpModel, z, u: int) -> np.ndarray:
    """One-step state distribution sum_x0 z(x0) T(.|x0, u)."""
    return np.asarray(z, dtype=float) @ model.kernel[u]


def obs_predictive(model: PomdpModel, z, u: int) -> np.ndarray:
    """H(y | z, u) = sum_{x0, x1} z(x0) T(x1 | x0, u) Q(y | x1)."""
    return prediction(model, z, u) @ model.channel


def belief_update(model: PomdpModel, z, u: int, y: int) -> np.ndarray:
    pred = prediction(model, z, u)
    joint = pred * model.channel[:, y]
    h = joint.sum()
    if h <= 0.0:
        raise ImpossibleObservation(f"observation {y} has zero probability under action {u}")
    return joint / h


def _merge_atoms(posteriors: np.ndarray, weights: np.ndarray) -> FilterKernelValue:
    keep_p: list[np.ndarray] = []
    keep_w: list[float] = []
    for post, w in zip(posteriors, weights):
        for k, other in enumerate(keep_p):
            if np.max(np.abs(other - post)) <= MERGE_TOL:
                keep_w[k] += w
                break
        else:
            keep_p.append(post)
            keep_w.append(float(w))
    return FilterKernelValue(np.array(keep_p), np.array(keep_w))


def filter_kernel_at(model: PomdpModel, z, u: int) -> FilterKernelValue:
    pred = prediction(model, z, u)
    joint = pred[:, None] * model.channel  # (x1, y)
    h = joint.sum(axis=0)
    live = np.flatnonzero(h > 0.0)
    posts = (joint[:, live] / h[live]).T
    return _merge_atoms(posts, h[live])


def belief_grid(n_states: int, m: int) -> BeliefGrid:
    """All beliefs with coordinates k/m; C(m+n-1, n-1) points, vertices first."""
    if n_states < 1 or m < 1:
        raise ValueError("belief_grid needs n_states >= 1 and m >= 1")
    pts = []
    for bars in itertools.combinations(range(m + n_states - 1), n_states - 1):
        counts = np.diff(np.concatenate([[-1], bars, [m + n_states - 1]])) - 1
        pts.append(counts)
    arr = np.array(pts, dtype=float).reshape(-1, n_states) / m
    is_vertex = arr.max(axis=1) == 1.0
    order = np.concatenate([np.flatnonzero(is_vertex)[::-1], np.flatnonzero(~is_vertex)])
    beliefs = arr[order]
    assert len(beliefs) == comb(m + n_states - 1, n_states - 1)
    return BeliefGrid(beliefs=beliefs, resolution=m)


def belief_ground_metric(
    beliefs: Sequence, state_space: FiniteMetricSpace, kind: Literal["W1", "BL", "TV"]
) -> FiniteMetricSpace:
    """Pairwise distances between beliefs, measured on the state space."""
    B = np.asarray(beliefs, dtype=float)
    k = len(B)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dist[i, j] = dist[j, i] = metrics.measure_distance(B[i], B[j], kind, state_space)
    return FiniteMetricSpace(labels=tuple(range(k)), dist=dist)


def _union(a: FilterKernelValue, b: FilterKernelValue):
    pts = list(a.posteriors)
    wa = list(a.weights)
    wb = [0.0] * len(pts)
    for post, w in zip(b.posteriors, b.weights):
        for k, other in enumerate(pts):
            if np.max(np.abs(other - post)) <= MERGE_TOL:
                wb[k] += w
                break
        else:
            pts.append(post)
            wa.append(0.0)
            wb.append(float(w))
    return np.array(pts), np.array(wa), np.array(wb)


def filter_value_distance(
    a: FilterKernelValue, b: FilterKernelValue, state_space: FiniteMetricSpace, kind: Literal["BL", "W1"]
) -> float:
    """Distance between two filter-kernel values over the union of their supports."""
    pts, wa, wb = _union(a, b)
    if np.max(np.abs(wa - wb)) == 0.0:
        return 0.0
    ground = belief_ground_metric(pts, state_space, kind)
    # renormalize away float drift; the weights already sum to 1 within 1e-15
    wa = wa / wa.sum()
    wb = wb / wb.sum()
    return metrics.measure_distance(wa, wb, kind, ground)


def _check_shared(a: PomdpModel, b: PomdpModel):
    if a.n_states != b.n_states or a.n_actions != b.n_actions:
        raise ValueError("models must share state and action spaces")


def filter_kernel_distance(
    model_a: PomdpModel, model_b: PomdpModel, grid: BeliefGrid, kind: Literal["BL", "W1"]
) -> FilterDistance:
    """Grid maximum of the BL or W1 distance between the two filter kernels."""
    _check_shared(model_a, model_b)
    best = FilterDistance(-1.0, grid.beliefs[0], 0, 0)
    for gi, z in enumerate(grid.beliefs):
        for u in range(model_a.n_actions):
            d = filter_value_distance(
                filter_kernel_at(model_a, z, u), filter_kernel_at(model_b, z, u), model_a.state_space, kind
            )
            if d > best.value:
                best = FilterDistance(d, z, u, gi)
    return best


def predictive_tv_gap(model_a: PomdpModel, model_b: PomdpModel, grid: BeliefGrid) -> FilterDistance:
    """Grid maximum of the TV distance between predictive observation laws."""
    _check_shared(model_a, model_b)
    if model_a.n_obs != model_b.n_obs:
        raise ValueError("models must share the observation space")
    best = FilterDistance(-1.0, grid.beliefs[0], 0, 0)
    for u in range(model_a.n_actions):
        ha = grid.beliefs @ model_a.kernel[u] @ model_a.channel
        hb = grid.beliefs @ model_b.kernel[u] @ model_b.channel
        gaps = np.abs(ha - hb).sum(axis=1)
        gi = int(np.argmax(gaps))
        if gaps[gi] > best.value:
            best = FilterDistance(float(gaps[gi]), grid.beliefs[gi], u, gi)
    return best
