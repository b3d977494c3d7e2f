"""State and observation quantization of POMDPs on intervals.

Continuous models are represented on a fine reference grid (cell midpoints of
a uniform partition of an interval); every bound check compares that fine
model with a quantized one, so all distances are exactly computable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .model import FiniteMetricSpace, PomdpModel

INTEGRATION_TOL = 1e-6


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Disjoint cells covering a finite space, one representative per cell.

    ``max_cell_diameter`` is the largest cell diameter; for interval partitions
    it is the interval length, otherwise the largest internal distance.
    """

    cells: tuple
    representatives: tuple
    max_cell_diameter: float
    bounds: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(np.asarray(c, dtype=int) for c in self.cells))
        object.__setattr__(self, "representatives", tuple(int(r) for r in self.representatives))

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_of(self, n_points: int) -> np.ndarray:
        out = np.full(n_points, -1)
        for k, cell in enumerate(self.cells):
            out[cell] = k
        return out

    def violations(self, n_points: int) -> list[str]:
        seen = np.concatenate(self.cells) if self.cells else np.array([], int)
        out = []
        if len(seen) != len(set(seen.tolist())):
            out.append("cells overlap")
        if set(seen.tolist()) != set(range(n_points)):
            out.append("cells do not cover the space")
        for k, (cell, rep) in enumerate(zip(self.cells, self.representatives)):
            if rep not in set(cell.tolist()):
                out.append(f"representative {rep} not in cell {k}")
        return out


def singleton_partition(space: FiniteMetricSpace) -> Partition:
    n = space.size
    return Partition(cells=tuple([i] for i in range(n)), representatives=tuple(range(n)), max_cell_diameter=0.0)


def point_partition(space: FiniteMetricSpace, cells: Sequence[Sequence[int]]) -> Partition:
    """Partition from explicit index sets; representative nearest the cell's medoid."""
    reps = []
    diam = 0.0
    for cell in cells:
        cell = np.asarray(cell, dtype=int)
        sub = space.dist[np.ix_(cell, cell)]
        diam = max(diam, float(sub.max()))
        reps.append(int(cell[np.argmin(sub.max(axis=1))]))
    return Partition(cells=tuple(cells), representatives=tuple(reps), max_cell_diameter=diam)


def interval_partition(space: FiniteMetricSpace, n_cells: int, domain: tuple[float, float]) -> Partition:
    """Uniform interval cells on ``domain``; points join the cell containing them.

    A point on a shared boundary goes to the lower cell index.  The
    representative is the point nearest the interval midpoint (lowest index
    on ties).
    """
    if not space.is_line:
        raise QuantizationError("interval partitions need a 1-D coordinate space")
    lo, hi = domain
    width = (hi - lo) / n_cells
    edges = lo + width * np.arange(n_cells + 1)
    x = space.coords
    idx = np.clip(np.ceil((x - lo) / width).astype(int) - 1, 0, n_cells - 1)
    cells, reps = [], []
    for k in range(n_cells):
        members = np.flatnonzero(idx == k)
        if members.size == 0:
            raise QuantizationError(f"cell {k} of the interval partition contains no grid point")
        mid = 0.5 * (edges[k] + edges[k + 1])
        reps.append(int(members[np.argmin(np.abs(x[members] - mid))]))
        cells.append(members)
    bounds = tuple((float(edges[k]), float(edges[k + 1])) for k in range(n_cells))
    return Partition(cells=tuple(cells), representatives=tuple(reps), max_cell_diameter=width, bounds=bounds)


def uniform_reference(part: Partition, n_points: int) -> np.ndarray:
    ref = np.zeros(n_points)
    for cell in part.cells:
        ref[cell] = 1.0 / (len(cell) * part.n_cells)
    return ref


@dataclass(frozen=True)
class ContinuousModelAdapter:
    """Parametric model on an interval, discretized onto a fine grid.

    ``truncated_normal_kernel``: next state ~ N(x + drift_u, sigma^2)
    truncated to ``domain``; observation y = obs_slope*x + obs_offset + v with
    v ~ N(0, obs_sigma^2) truncated to ``obs_domain``; cost c(x, u) = x - drift_u.
    ``table_on_fine_grid``: ``table`` is already a finite model and passes through.
    """

    kind: str = "truncated_normal_kernel"
    sigma: float = 1.0
    drifts: tuple = (0.0,)
    domain: tuple = (0.0, 1.0)
    fine_grid_size: int = 400
    obs_sigma: float = 1.0
    obs_slope: float = 1.0
    obs_offset: float = 0.0
    obs_domain: tuple = (-1.0, 2.0)
    obs_grid_size: int = 60
    nodes: int = 16
    table: Optional[PomdpModel] = field(default=None, compare=False)

    def violations(self) -> list[str]:
        out = []
        if self.kind not in ("truncated_normal_kernel", "table_on_fine_grid"):
            out.append(f"unknown adapter kind {self.kind!r}")
        if self.kind == "table_on_fine_grid" and self.table is None:
            out.append("table_on_fine_grid needs a table")
        if self.sigma <= 0 or self.obs_sigma <= 0:
            out.append("standard deviations must be positive")
        if self.fine_grid_size < 1 or self.obs_grid_size < 1:
            out.append("grid sizes must be positive")
        return out


def grid_midpoints(domain: tuple[float, float], n: int) -> np.ndarray:
    lo, hi = domain
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def gaussian_cell_masses(
    means, sigma: float, domain: tuple[float, float], n_cells: int, nodes: int = 16
) -> tuple[np.ndarray, float]:
    """Cell masses of N(mean, sigma^2) truncated to ``domain``.

    Densities are integrated per cell with ``nodes``-point Gauss-Legendre and
    normalized by the closed-form truncation mass; rows are then renormalized.
    Returns (rows, max renormalization defect).
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    lo, hi = domain
    width = (hi - lo) / n_cells
    t, w = np.polynomial.legendre.leggauss(nodes)
    left = lo + width * np.arange(n_cells)
    pts = left[:, None] + 0.5 * width * (t[None, :] + 1.0)  # (cells, nodes)
    z = (pts[None, :, :] - means[:, None, None]) / sigma
    dens = np.exp(-0.5 * z * z) / (sigma * np.sqrt(2.0 * np.pi))
    raw = 0.5 * width * (dens * w).sum(axis=-1)
    norm = ndtr((hi - means) / sigma) - ndtr((lo - means) / sigma)
    rows = raw / norm[:, None]
    sums = rows.sum(axis=1)
    defect = float(np.max(np.abs(sums - 1.0)))
    if defect > INTEGRATION_TOL:
        raise QuantizationError(f"integration defect {defect:.3g} exceeds {INTEGRATION_TOL}")
    return rows / sums[:, None], defect


def discretize_reference(adapter: ContinuousModelAdapter) -> tuple[PomdpModel, float]:
    """Fine-grid model of ``adapter`` and its integration defect."""
    problems = adapter.violations()
    if problems:
        raise QuantizationError("; ".join(problems))
    if adapter.kind == "table_on_fine_grid":
        return adapter.table, 0.0
    n = adapter.fine_grid_size
    xs = grid_midpoints(adapter.domain, n)
    space = FiniteMetricSpace.from_coordinates(xs, labels=[f"x{i}" for i in range(n)])
    kernel = []
    defect = 0.0
    for drift in adapter.drifts:
        rows, d = gaussian_cell_masses(xs + drift, adapter.sigma, adapter.domain, n, adapter.nodes)
        kernel.append(rows)
        defect = max(defect, d)
    ys = grid_midpoints(adapter.obs_domain, adapter.obs_grid_size)
    obs_space = FiniteMetricSpace.from_coordinates(ys, labels=[f"y{j}" for j in range(len(ys))])
    channel, d = gaussian_cell_masses(
        adapter.obs_slope * xs + adapter.obs_offset,
        adapter.obs_sigma,
        adapter.obs_domain,
        adapter.obs_grid_size,
        adapter.nodes,
    )
    defect = max(defect, d)
    cost = xs[:, None] - np.asarray(adapter.drifts)[None, :]
    model = PomdpModel(
        state_space=space,
        action_labels=tuple(f"u{k}" for k in range(len(adapter.drifts))),
        obs_space=obs_space,
        kernel=np.array(kernel),
        channel=channel,
        cost=cost,
        prior=np.full(n, 1.0 / n),
        name=f"truncnorm(sigma={adapter.sigma:g})",
    )
    return model, defect


def _sub_space(space: FiniteMetricSpace, idx: Sequence[int]) -> FiniteMetricSpace:
    idx = list(idx)
    coords = space.coords[idx] if space.is_line else None
    return FiniteMetricSpace(
        labels=tuple(space.labels[i] for i in idx), dist=space.dist[np.ix_(idx, idx)], coords=coords
    )


def _cell_weights(part: Partition, reference) -> list[np.ndarray]:
    ref = np.asarray(reference, dtype=float)
    out = []
    for k, cell in enumerate(part.cells):
        mass = ref[cell].sum()
        if mass <= 0:
            raise QuantizationError(f"reference measure gives zero mass to cell {k}")
        out.append(ref[cell] / mass)
    return out


def quantize_states(fine: PomdpModel, part: Partition, reference=None) -> tuple[PomdpModel, float]:
    """Finite model on the cell representatives; returns (coarse, L_Xn)."""
    if reference is None:
        reference = uniform_reference(part, fine.n_states)
    weights = _cell_weights(part, reference)
    k = part.n_cells
    # aggregation matrix: fine state -> cell
    agg = np.zeros((fine.n_states, k))
    for j, cell in enumerate(part.cells):
        agg[cell, j] = 1.0
    kernel = np.zeros((fine.n_actions, k, k))
    channel = np.zeros((k, fine.n_obs))
    cost = np.zeros((k, fine.n_actions))
    for i, (cell, w) in enumerate(zip(part.cells, weights)):
        kernel[:, i, :] = np.einsum("c,acs->as", w, fine.kernel[:, cell, :]) @ agg
        channel[i] = w @ fine.channel[cell]
        cost[i] = w @ fine.cost[cell]
    coarse = PomdpModel(
        state_space=_sub_space(fine.state_space, part.representatives),
        action_labels=fine.action_labels,
        obs_space=fine.obs_space,
        kernel=kernel,
        channel=channel,
        cost=cost,
        prior=fine.prior @ agg,
        discount=fine.discount,
        name=f"{fine.name}/states{k}",
    )
    return coarse, part.max_cell_diameter


def lift_coarse_kernel(coarse: PomdpModel, part: Partition, fine_space: FiniteMetricSpace) -> np.ndarray:
    """Fine-indexed kernel: each fine state takes its cell's coarse row, with
    the coarse masses placed at the representatives."""
    n = fine_space.size
    cell_of = part.cell_of(n)
    lifted = np.zeros((coarse.n_actions, n, n))
    reps = np.array(part.representatives)
    for x in range(n):
        lifted[:, x, reps] = coarse.kernel[:, cell_of[x], :]
    return lifted


def merge_channel(channel, part: Partition) -> np.ndarray:
    """Q_n(y_i | x) = Q(B_i | x)."""
    channel = np.asarray(channel, dtype=float)
    return np.stack([channel[:, cell].sum(axis=1) for cell in part.cells], axis=1)


def spread_channel(coarse_channel, part: Partition, cell_widths, n_fine: int) -> np.ndarray:
    """Intermediate channel on the fine observation grid: each coarse cell's
    mass spread in proportion to fine cell width."""
    cell_widths = np.asarray(cell_widths, dtype=float)
    out = np.zeros((coarse_channel.shape[0], n_fine))
    for i, cell in enumerate(part.cells):
        share = cell_widths[cell] / cell_widths[cell].sum()
        out[:, cell] = coarse_channel[:, [i]] * share[None, :]
    return out


def quantize_observations(fine: PomdpModel, part: Partition) -> tuple[PomdpModel, float]:
    """Model with observation cells merged; returns (model, L_Yn)."""
    channel = merge_channel(fine.channel, part)
    model = fine.with_(
        obs_space=_sub_space(fine.obs_space, part.representatives),
        channel=channel,
        name=f"{fine.name}/obs{part.n_cells}",
    )
    return model, part.max_cell_diameter


def joint_quantize(
    fine: PomdpModel, state_part: Partition, obs_part: Partition, reference=None
) -> tuple[PomdpModel, float, float]:
    obs_model, l_yn = quantize_observations(fine, obs_part)
    coarse, l_xn = quantize_states(obs_model, state_part, reference)
    return coarse, l_xn, l_yn


def lifted_approximation(
    fine: PomdpModel, state_part: Partition, obs_part: Optional[Partition] = None, reference=None
) -> PomdpModel:
    """The quantized model viewed on the fine state space.

    Kernel: lifted coarse kernel (mass at representatives, constant on cells).
    Channel: the fine channel with observation cells merged, at every fine
    state.  Its filter kernel is directly comparable with the fine model's.
    """
    coarse, _ = quantize_states(fine, state_part, reference)
    model = fine.with_(kernel=lift_coarse_kernel(coarse, state_part, fine.state_space), name=f"{fine.name}/lifted")
    if obs_part is not None:
        model, _ = quantize_observations(model, obs_part)
    return model


def density_lipschitz(channel, obs_space: FiniteMetricSpace, cell_widths) -> float:
    """Largest finite-difference slope in y of the observation densities
    Q(y_j | x) / width_j, over all states and neighbouring fine cells."""
    if not obs_space.is_line:
        raise QuantizationError("observation densities need a 1-D observation grid")
    order = np.argsort(obs_space.coords, kind="stable")
    dens = np.asarray(channel, dtype=float)[:, order] / np.asarray(cell_widths, dtype=float)[order]
    gaps = np.diff(obs_space.coords[order])
    if gaps.size == 0:
        return 0.0
    return float(np.max(np.abs(np.diff(dens, axis=1)) / gaps))
