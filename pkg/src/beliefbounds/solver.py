"""Dynamic programming on a finite belief grid.

Filter-kernel atoms are snapped to the nearest grid belief, giving a finite
MDP whose states are grid points.  The largest snapping displacement is kept
as ``grid_defect`` so certification can add it explicitly as slack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from . import metrics
from .belief import BeliefGrid, filter_kernel_at
from .model import PomdpModel


class NonConvergence(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class BeliefMdp:
    grid: BeliefGrid
    transition: np.ndarray  # (actions, g, g)
    stage_cost: np.ndarray  # (g, actions)
    grid_defect: float  # largest snapping displacement, in the snap metric
    grid_defect_w1: float  # the same displacement measured in W1 on the state space
    snap_metric: str = "L1"

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    def __len__(self):
        return len(self.grid)


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    beta: Optional[float]
    residual: float
    iterations: int = 0
    steps: tuple = ()  # sup-norm change per iteration


def _snap_distances(points: np.ndarray, grid: BeliefGrid, snap_metric: str, model: PomdpModel) -> np.ndarray:
    if snap_metric == "L1":
        return np.abs(points[:, None, :] - grid.beliefs[None, :, :]).sum(axis=-1)
    if snap_metric == "W1":
        return np.array([[metrics.w1_distance(p, g, model.state_space) for g in grid.beliefs] for p in points])
    raise ValueError(f"unknown snap metric {snap_metric!r}")


def snap_to_grid(points, grid: BeliefGrid, snap_metric: str = "L1", model: Optional[PomdpModel] = None):
    """Nearest grid index for each belief (lowest index on ties) and the distance."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = _snap_distances(points, grid, snap_metric, model)
    idx = np.argmin(d, axis=1)  # argmin returns the first minimum
    return idx, d[np.arange(len(points)), idx]


def _w1_displacement(model: PomdpModel, a, b) -> float:
    return metrics.w1_distance(a / a.sum(), b, model.state_space)


def build_belief_mdp(model: PomdpModel, grid: BeliefGrid, snap_metric: Literal["L1", "W1"] = "L1") -> BeliefMdp:
    g = len(grid)
    trans = np.zeros((model.n_actions, g, g))
    defect = 0.0
    defect_w1 = 0.0
    for gi, z in enumerate(grid.beliefs):
        for u in range(model.n_actions):
            fk = filter_kernel_at(model, z, u)
            idx, dist = snap_to_grid(fk.posteriors, grid, snap_metric, model)
            np.add.at(trans[u, gi], idx, fk.weights)
            defect = max(defect, float(dist.max()))
            for post, k in zip(fk.posteriors, idx):
                if not np.array_equal(post, grid.beliefs[k]):
                    defect_w1 = max(defect_w1, _w1_displacement(model, post, grid.beliefs[k]))
    trans /= trans.sum(axis=2, keepdims=True)
    return BeliefMdp(
        grid=grid,
        transition=trans,
        stage_cost=grid.beliefs @ model.cost,
        grid_defect=defect,
        grid_defect_w1=defect_w1,
        snap_metric=snap_metric,
    )


def _q_values(bmdp: BeliefMdp, v: np.ndarray, beta: float) -> np.ndarray:
    return bmdp.stage_cost + beta * np.einsum("agh,h->ga", bmdp.transition, v)


def greedy(q: np.ndarray) -> np.ndarray:
    return np.argmin(q, axis=1)  # first minimum: lowest action index


def value_iteration(
    bmdp: BeliefMdp, beta: float, tol: float, max_iter: int = 1_000_000, v0=None
) -> tuple[ValueFunction, np.ndarray]:
    """Discounted value iteration; stops when the fixed-point error is <= tol."""
    if not 0.0 < beta < 1.0 or tol <= 0:
        raise ValueError("value_iteration needs beta in (0, 1) and tol > 0")
    v = np.zeros(len(bmdp)) if v0 is None else np.array(v0, dtype=float)
    stop = tol * (1.0 - beta) / (2.0 * beta)
    steps = []
    for it in range(1, max_iter + 1):
        q = _q_values(bmdp, v, beta)
        v_new = q.min(axis=1)
        step = float(np.max(np.abs(v_new - v)))
        steps.append(step)
        v = v_new
        if step <= stop:
            break
    else:
        raise NonConvergence("value iteration hit max_iter", {"last_step": steps[-1]})
    policy = greedy(_q_values(bmdp, v, beta))
    residual = float(np.max(np.abs(_q_values(bmdp, v, beta).min(axis=1) - v)))
    return ValueFunction(v, beta, residual, it, tuple(steps)), policy


def policy_evaluation(bmdp: BeliefMdp, policy, beta: float, tol: float = 0.0) -> ValueFunction:
    """Value of a stationary policy, by a direct linear solve of V = c + beta P V."""
    policy = np.asarray(policy, dtype=int)
    g = np.arange(len(bmdp))
    p = bmdp.transition[policy, g, :]
    c = bmdp.stage_cost[g, policy]
    v = np.linalg.solve(np.eye(len(bmdp)) - beta * p, c)
    residual = float(np.max(np.abs(c + beta * p @ v - v)))
    return ValueFunction(v, beta, residual)


def cross_evaluate(
    true_model: PomdpModel,
    approx_policy,
    approx_grid: BeliefGrid,
    true_grid: BeliefGrid,
    beta: float,
    tol: float = 0.0,
    snap_metric: Literal["L1", "W1"] = "L1",
    true_bmdp: Optional[BeliefMdp] = None,
) -> ValueFunction:
    """Value on the true model of the policy designed on another belief grid.

    Each true grid belief takes the action of its nearest approximate-grid belief.
    """
    if true_bmdp is None:
        true_bmdp = build_belief_mdp(true_model, true_grid, snap_metric)
    if approx_grid.n_states != true_grid.n_states:
        raise ValueError("approximate and true grids live on different simplices")
    idx, _ = snap_to_grid(true_grid.beliefs, approx_grid, snap_metric, true_model)
    induced = np.asarray(approx_policy, dtype=int)[idx]
    return policy_evaluation(true_bmdp, induced, beta, tol)


def finite_horizon_dp(bmdp: BeliefMdp, stage_costs, terminal) -> np.ndarray:
    """Backward recursion V_t = min_u [c_t + P_u V_{t+1}]; returns V_0.

    ``stage_costs`` is a sequence of N arrays of shape (g, actions).
    """
    stage_costs = list(stage_costs)
    if not stage_costs:
        raise ValueError("finite_horizon_dp needs N >= 1")
    v = np.asarray(terminal, dtype=float) * np.ones(len(bmdp))
    for c in reversed(stage_costs):
        v = (np.asarray(c) + np.einsum("agh,h->ga", bmdp.transition, v)).min(axis=1)
    return v


def relative_value_iteration(
    bmdp: BeliefMdp, tol: float = 1e-9, max_iter: int = 200_000, aperiodicity: float = 0.5, ref: int = 0
) -> tuple[float, np.ndarray]:
    """Average-cost relative VI on the aperiodicity-transformed MDP.

    The transform P -> tau I + (1 - tau) P leaves the optimal average cost
    unchanged and rules out periodic oscillation.  Returns (rho*, bias).
    """
    g = len(bmdp)
    tau = aperiodicity
    trans = tau * np.eye(g)[None, :, :] + (1.0 - tau) * bmdp.transition
    h = np.zeros(g)
    spans = []
    for _ in range(max_iter):
        th = (bmdp.stage_cost + np.einsum("agh,h->ga", trans, h)).min(axis=1)
        diff = th - h
        span = float(diff.max() - diff.min())
        spans.append(span)
        h = th - th[ref]
        if span <= tol:
            rho = 0.5 * float(diff.max() + diff.min())
            # bias of the original chain is the transformed bias scaled by (1 - tau)
            return rho, h * (1.0 - tau)
    raise NonConvergence(
        "relative value iteration did not reach the span tolerance",
        {"last_span": spans[-1], "first_span": spans[0], "iterations": len(spans)},
    )


def policy_average_cost(bmdp: BeliefMdp, policy, tol: float = 1e-9, max_iter: int = 200_000) -> float:
    """Long-run average cost of a stationary policy (relative VI with one action)."""
    policy = np.asarray(policy, dtype=int)
    g = np.arange(len(bmdp))
    single = BeliefMdp(
        grid=bmdp.grid,
        transition=bmdp.transition[policy, g, :][None, :, :],
        stage_cost=bmdp.stage_cost[g, policy][:, None],
        grid_defect=bmdp.grid_defect,
        grid_defect_w1=bmdp.grid_defect_w1,
    )
    rho, _ = relative_value_iteration(single, tol, max_iter)
    return rho


def vanishing_discount(bmdp: BeliefMdp, betas=(0.9, 0.99, 0.999), tol: float = 1e-10) -> list[tuple[float, float]]:
    """(beta, (1 - beta) * min J*_beta) for each beta."""
    out = []
    v = None
    for beta in betas:
        vf, _ = value_iteration(bmdp, beta, tol, v0=v)
        v = vf.values
        out.append((beta, (1.0 - beta) * float(vf.values.mean())))
    return out


def truncation_horizon(beta: float, budget_ratio: float = 1e-4) -> int:
    """Smallest H with beta^H / (1 - beta) <= budget_ratio."""
    h = int(np.ceil(np.log(budget_ratio * (1.0 - beta)) / np.log(beta)))
    return max(h, 1)


def rollout_cost(
    model: PomdpModel,
    policy,
    grid: BeliefGrid,
    beta: float,
    horizon: Optional[int] = None,
    n_runs: int = 1000,
    seed: int = 0,
    prior=None,
    filter_model: Optional[PomdpModel] = None,
    filter_prior=None,
    snap_metric: str = "L1",
) -> tuple[float, float]:
    """Monte Carlo discounted cost of a grid policy on ``model``.

    States and observations follow ``model`` from ``prior``; the controller
    runs the Bayes filter of ``filter_model`` (default: the true model) from
    ``filter_prior`` and acts on the nearest grid belief.  Observations are
    drawn after the first transition, matching the belief recursion.
    Returns (mean, standard error).
    """
    if horizon is None:
        horizon = truncation_horizon(beta)
    fm = filter_model if filter_model is not None else model
    prior = model.prior if prior is None else np.asarray(prior, dtype=float)
    z0 = fm.prior if filter_prior is None else np.asarray(filter_prior, dtype=float)
    if filter_prior is None and filter_model is None:
        z0 = prior
    policy = np.asarray(policy, dtype=int)
    root = np.random.SeedSequence(seed)
    totals = np.zeros(n_runs)
    for run, child in enumerate(root.spawn(n_runs)):
        rng = np.random.default_rng(child)
        x = rng.choice(model.n_states, p=prior)
        z = z0.copy()
        total = 0.0
        disc = 1.0
        for _ in range(horizon):
            gi, _ = snap_to_grid(z, grid, snap_metric, fm)
            u = int(policy[gi[0]])
            total += disc * model.cost[x, u]
            disc *= beta
            x = rng.choice(model.n_states, p=model.kernel[u, x])
            y = rng.choice(model.n_obs, p=model.channel[x])
            pred = z @ fm.kernel[u]
            post = pred * fm.channel[:, y]
            s = post.sum()
            # an observation the controller's model deems impossible resets to the prediction
            z = post / s if s > 0 else pred
        totals[run] = total
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
    return mean, stderr
