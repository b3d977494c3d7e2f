"""End-to-end certification of a scenario.

A scenario names a true model, a recipe that turns it into an approximate
model, and solver settings.  :func:`run_verify` measures every left-hand side
with the belief and solver modules, evaluates the matching right-hand side
with :mod:`beliefbounds.bounds`, and certifies each pair.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import bounds, metrics, solver
from .belief import belief_grid, filter_kernel_distance, predictive_tv_gap
from .formats import Perturbation, Scenario
from .model import ModelConstants, PomdpModel, derive_constants
from .quantize import (
    discretize_reference,
    density_lipschitz,
    interval_partition,
    lift_coarse_kernel,
    merge_channel,
    quantize_states,
    spread_channel,
)

# bounds certified by ``verify``; the remaining ids are closed forms without
# a perturbation left-hand side
VERIFY_IDS = tuple(b for b in bounds.BOUND_IDS if b not in ("K2_WASS", "K2_ALT", "VALUE_LIP"))
QUANT_IDS = ("QUANT_STATE", "QUANT_OBS_TV", "OBS_VALUE", "JOINT_FILTER_W1", "JOINT_DISC", "JOINT_AVG")


class PipelineError(RuntimeError):
    """A stage of the pipeline failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Prepared:
    true: PomdpModel
    approx: PomdpModel
    integration_defect: float = 0.0
    l_xn: Optional[float] = None
    l_yn: Optional[float] = None
    alpha_y: Optional[float] = None
    obs_only: Optional[PomdpModel] = None  # true kernel with the quantized channel


@dataclass
class VerifyResult:
    scenario: str
    reports: list
    context: dict = field(default_factory=dict)

    @property
    def failed(self) -> list:
        return [r for r in self.reports if r.status == "fail"]


def _blend(rows: np.ndarray, eps: float, how: str, rng: np.random.Generator) -> np.ndarray:
    """(1 - eps) rows + eps * (uniform rows or column-permuted rows)."""
    if eps == 0.0:
        return rows
    k = rows.shape[-1]
    if how == "uniform":
        other = np.full_like(rows, 1.0 / k)
    else:
        other = rows[..., rng.permutation(k)]
    return (1.0 - eps) * rows + eps * other


def perturb(model: PomdpModel, pert: Perturbation, seed: int = 0) -> PomdpModel:
    """Apply the mixing part of a recipe; distances are at most 2 eps by convexity."""
    rng = np.random.default_rng(seed)
    kernel = _blend(model.kernel, pert.kernel_mix, pert.blend, rng)
    channel = _blend(model.channel, pert.channel_mix, pert.blend, rng)
    prior = model.prior
    if pert.prior_shift > 0.0:
        point = np.zeros(model.n_states)
        point[0] = 1.0
        prior = (1.0 - pert.prior_shift) * prior + pert.prior_shift * point
    return model.with_(kernel=kernel, channel=channel, prior=prior, name=f"{model.name}/perturbed")


def prepare(scn: Scenario) -> Prepared:
    """True model and approximate model, both on the true state and observation spaces."""
    if scn.model is not None:
        true = scn.model
        return Prepared(true=true, approx=perturb(true, scn.perturbation, scn.seed))
    true, defect = discretize_reference(scn.adapter)
    ad = scn.adapter
    pert = scn.perturbation
    out = Prepared(true=true, approx=true, integration_defect=defect)
    obs_widths = np.full(true.n_obs, (ad.obs_domain[1] - ad.obs_domain[0]) / ad.obs_grid_size)
    out.alpha_y = density_lipschitz(true.channel, true.obs_space, obs_widths)
    approx = true
    if pert.n_x is not None:
        part = interval_partition(true.state_space, pert.n_x, ad.domain)
        coarse, out.l_xn = quantize_states(true, part)
        approx = approx.with_(kernel=lift_coarse_kernel(coarse, part, true.state_space))
    if pert.n_y is not None:
        opart = interval_partition(true.obs_space, pert.n_y, ad.obs_domain)
        out.l_yn = opart.max_cell_diameter
        # spreading the merged channel back over the fine cells changes no posterior
        tilde = spread_channel(merge_channel(true.channel, opart), opart, obs_widths, true.n_obs)
        approx = approx.with_(channel=tilde)
        out.obs_only = true.with_(channel=tilde, name=f"{true.name}/obs{pert.n_y}")
    out.approx = perturb(approx.with_(name=f"{true.name}/quantized"), pert, scn.seed)
    return out


def _fmt_belief(z) -> str:
    return "[" + ",".join(f"{v:.6g}" for v in z) + "]"


def _where(z, u, model: PomdpModel) -> str:
    return f"belief={_fmt_belief(z)} action={model.action_labels[u]}"


def _grid_argmax(values: np.ndarray, grid, prefix: str = "") -> str:
    gi = int(np.argmax(values))
    return f"{prefix}belief={_fmt_belief(grid.beliefs[gi])}"


class _Run:
    def __init__(self, scn: Scenario, want, timings: bool):
        self.scn = scn
        self.want = want
        self.timings = {} if timings else None
        self.reports: list = []
        self.context: dict = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise PipelineError(name, exc) from exc
        finally:
            if self.timings is not None:
                self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def certify(self, bound_id, inputs, lhs, slack=0.0, argmax=None):
        if bound_id not in self.want:
            return
        spec = bounds.evaluate_bound(bound_id, inputs)
        if not spec.applicable:
            slack = 0.0
        rep = bounds.certify(bound_id, lhs, spec, slack=slack, scenario=self.scn.name, argmax=argmax)
        self.reports.append(rep)


def _consts_dict(c: ModelConstants) -> dict:
    return {k: v for k, v in c.as_dict().items() if v is not None}


def run_verify(
    scn: Scenario,
    grid_m: Optional[int] = None,
    tol: Optional[float] = None,
    timings: bool = False,
) -> VerifyResult:
    settings = scn.solver
    if grid_m is not None:
        settings = replace(settings, grid_m=grid_m)
    if tol is not None:
        settings = replace(settings, tol=tol)
    quantized = scn.perturbation.n_x is not None or scn.perturbation.n_y is not None
    want = set(scn.bounds) if scn.bounds is not None else set(VERIFY_IDS)
    if not quantized:
        want -= set(QUANT_IDS)
    if scn.bounds is None and scn.perturbation.prior_shift == 0.0:
        want.discard("PRIOR_MISMATCH")
    run = _Run(scn, want, timings)
    beta, tol_vi = settings.beta, settings.tol

    with run.stage("build"):
        prep = prepare(scn)
        true, approx = prep.true, prep.approx
    with run.stage("constants"):
        ct = derive_constants(true, alpha_y=prep.alpha_y)
        ca = derive_constants(approx)
    with run.stage("kernel_distances"):
        d_tv_k = metrics.kernel_distance(approx.kernel, true.kernel, "TV")
        d_w1_k = metrics.kernel_distance(approx.kernel, true.kernel, "W1", true.state_space)
        d_tv_q = metrics.channel_distance(approx.channel, true.channel, "TV")
        prior_tv = metrics.tv_distance(approx.prior, true.prior)

    base = {
        "d_tv_kernel": d_tv_k,
        "d_tv_channel": d_tv_q,
        "d_w1_kernel": d_w1_k,
        "l_q": ct.l_q,
        "diameter": ct.diameter,
        "beta": beta,
        "k1": ct.k1,
        "k2": ct.k2,
        "k2_approx": ca.k2,
        "cost_sup": true.cost_sup,
        "prior_tv": prior_tv,
    }
    run.context.update(
        {
            "true_model": true.name,
            "approx_model": approx.name,
            "constants_true": _consts_dict(ct),
            "constants_approx": _consts_dict(ca),
            "d_tv_kernel": d_tv_k,
            "d_w1_kernel": d_w1_k,
            "d_tv_channel": d_tv_q,
            "prior_tv": prior_tv,
            "integration_defect": prep.integration_defect,
            "grid_m": settings.grid_m,
            "beta": beta,
            "tol": tol_vi,
        }
    )

    grid = belief_grid(true.n_states, settings.grid_m)
    run.context["grid_points"] = len(grid)

    if want & {"MAIN1", "MAIN2"}:
        with run.stage("filter_bl"):
            bl = filter_kernel_distance(approx, true, grid, "BL")
        where = _where(bl.belief, bl.action, true)
        run.certify("MAIN1", base, bl.value, argmax=where)
        run.certify("MAIN2", base, bl.value, argmax=where)
    w1 = None
    if want & {"W1MAIN1", "W1MAIN2", "JOINT_FILTER_W1"}:
        with run.stage("filter_w1"):
            w1 = filter_kernel_distance(approx, true, grid, "W1")
        where = _where(w1.belief, w1.action, true)
        run.certify("W1MAIN1", base, w1.value, argmax=where)
        run.certify("W1MAIN2", base, w1.value, argmax=where)
    if want & {"PRED_TV", "PRED_TV_REF"}:
        with run.stage("predictive"):
            gap = predictive_tv_gap(approx, true, grid)
        where = _where(gap.belief, gap.action, true)
        run.certify("PRED_TV", base, gap.value, argmax=where)
        run.certify("PRED_TV_REF", base, gap.value, argmax=where)

    quant = dict(base)
    if quantized:
        # the quantization bounds use the W1 modulus of the kernel
        quant.update({"alpha": ct.theta, "l_xn": prep.l_xn or 0.0, "alpha_y": prep.alpha_y, "l_yn": prep.l_yn or 0.0})
        run.context.update({"l_xn": prep.l_xn, "l_yn": prep.l_yn, "alpha_y": prep.alpha_y})
        if prep.l_xn is not None:
            rows = metrics.kernel_distance_rows(approx.kernel, true.kernel, "W1", true.state_space)
            u, x = np.unravel_index(int(np.argmax(rows)), rows.shape)
            run.certify("QUANT_STATE", quant, float(rows.max()), argmax=f"state={true.state_space.labels[x]} action={true.action_labels[u]}")
        if prep.l_yn is not None:
            rows = np.abs(approx.channel - true.channel).sum(axis=1)
            run.certify("QUANT_OBS_TV", quant, float(rows.max()), argmax=f"state={true.state_space.labels[int(np.argmax(rows))]}")
        if w1 is not None:
            run.certify("JOINT_FILTER_W1", quant, w1.value, argmax=_where(w1.belief, w1.action, true))

    needs_dp = want & {
        "DISC_CONT", "DISC_CONT_REF", "DISC_ROBUST", "DISC_ROBUST_REF", "DISC_ROBUST_TWO_LIP",
        "JOINT_DISC", "OBS_VALUE", "PRIOR_MISMATCH", "AVG_CONT", "AVG_ROBUST", "JOINT_AVG", "FIN_HORIZON",
    }
    if not needs_dp:
        return _finish(run)

    with run.stage("belief_mdp"):
        bt = solver.build_belief_mdp(true, grid, settings.snap)
        ba = solver.build_belief_mdp(approx, grid, settings.snap)
    extra = bt.grid_defect_w1 + ba.grid_defect_w1
    run.context.update({"grid_defect_true": bt.grid_defect_w1, "grid_defect_approx": ba.grid_defect_w1})

    def slack(bound_id, inputs, solves=2):
        spec = bounds.evaluate_bound(bound_id, inputs)
        if not spec.applicable:
            return 0.0
        return bounds.snapping_slack(bound_id, inputs, extra) + 2.0 * tol_vi * solves

    disc_ids = {"DISC_CONT", "DISC_CONT_REF", "DISC_ROBUST", "DISC_ROBUST_REF", "DISC_ROBUST_TWO_LIP", "JOINT_DISC", "OBS_VALUE", "PRIOR_MISMATCH"}
    if want & disc_ids:
        with run.stage("value_iteration"):
            vt, pt = solver.value_iteration(bt, beta, tol_vi)
            va, pa = solver.value_iteration(ba, beta, tol_vi)
        diff = np.abs(vt.values - va.values)
        run.context["value_gap"] = float(diff.max())
        for bid in ("DISC_CONT", "DISC_CONT_REF"):
            run.certify(bid, base, float(diff.max()), slack(bid, base), _grid_argmax(diff, grid))
        with run.stage("cross_evaluate"):
            cross = solver.cross_evaluate(true, pa, grid, grid, beta, tol_vi, settings.snap, true_bmdp=bt)
        loss = np.abs(cross.values - vt.values)
        where = _grid_argmax(loss, grid)
        for bid in ("DISC_ROBUST", "DISC_ROBUST_REF", "DISC_ROBUST_TWO_LIP"):
            run.certify(bid, base, float(loss.max()), slack(bid, base), where)
        if quantized:
            run.certify("JOINT_DISC", quant, float(loss.max()), slack("JOINT_DISC", quant), where)
        if "OBS_VALUE" in want and prep.obs_only is not None:
            with run.stage("observation_value"):
                bo = solver.build_belief_mdp(prep.obs_only, grid, settings.snap)
                vo, _ = solver.value_iteration(bo, beta, tol_vi)
            gap = vo.values - vt.values
            # regularity-free snapping charge: this bound assumes no Lipschitz value function
            lip_part = bounds.snapping_slack("DISC_CONT", base, bt.grid_defect_w1 + bo.grid_defect_w1)
            s = min(lip_part, bounds.crude_value_slack(beta, true.cost_sup)) + 4.0 * tol_vi
            run.certify("OBS_VALUE", quant, float(max(gap.max(), 0.0)), s, _grid_argmax(gap, grid))
        if "PRIOR_MISMATCH" in want:
            _prior_mismatch(run, settings, base, true, approx, grid, bt, vt, pa, extra)

    if want & {"AVG_CONT", "AVG_ROBUST", "JOINT_AVG"}:
        _average(run, settings, base, quant, quantized, bt, ba, extra)

    if "FIN_HORIZON" in want:
        n = settings.horizon
        fin = dict(base)
        fin.update(
            {
                "lipschitz": [ct.k1] * (n - 1) + [0.0],  # stage costs c~, zero terminal cost
                "m_const": ct.k2,
                "d": (ct.diameter / 2.0 + 2.0) * (d_tv_k + d_tv_q),
            }
        )
        with run.stage("finite_horizon"):
            costs = [bt.stage_cost] * n
            v0t = solver.finite_horizon_dp(bt, costs, 0.0)
            v0a = solver.finite_horizon_dp(ba, costs, 0.0)
        gap = np.abs(v0t - v0a)
        s = bounds.snapping_slack("FIN_HORIZON", fin, extra)
        run.certify("FIN_HORIZON", fin, float(gap.max()), s, _grid_argmax(gap, grid))
    return _finish(run)


def _prior_mismatch(run, settings, base, true, approx, grid, bt, vt, pa, extra):
    beta = settings.beta
    with run.stage("rollout"):
        horizon = solver.truncation_horizon(beta)
        mean, stderr = solver.rollout_cost(
            true, pa, grid, beta, horizon, settings.rollouts, seed=run.scn.seed,
            prior=true.prior, filter_model=approx, filter_prior=approx.prior, snap_metric=settings.snap,
        )
    idx, _ = solver.snap_to_grid(true.prior, grid, "L1")
    gi = int(idx[0])
    prior_snap = metrics.w1_distance(true.prior, grid.beliefs[gi], true.state_space)
    lhs = mean - float(vt.values[gi])
    spec = bounds.evaluate_bound("PRIOR_MISMATCH", base)
    s = 0.0
    if spec.applicable:
        lip = bounds.value_lipschitz(base["k1"], beta, base["k2"])
        truncation = beta**horizon * true.cost_sup / (1.0 - beta)
        s = (
            bounds.snapping_slack("PRIOR_MISMATCH", base, extra)
            + bounds.grid_value_slack(beta, lip, bt.grid_defect_w1)
            + lip * prior_snap
            + 4.0 * stderr
            + truncation
            + 2.0 * settings.tol
        )
    run.context.update({"rollout_mean": mean, "rollout_stderr": stderr, "rollout_horizon": horizon})
    run.certify("PRIOR_MISMATCH", base, lhs, s, f"prior={_fmt_belief(true.prior)}")


def _average(run, settings, base, quant, quantized, bt, ba, extra):
    k2, k2n = base["k2"], base["k2_approx"]
    if not (k2 < 1.0 and k2n < 1.0):
        # standing assumptions fail: report n/a without solving
        for bid, inputs in (("AVG_CONT", base), ("AVG_ROBUST", base), ("JOINT_AVG", quant)):
            if bid != "JOINT_AVG" or quantized:
                run.certify(bid, inputs, math.nan)
        return
    tol = settings.tol
    with run.stage("relative_value_iteration"):
        rho_t, _ = solver.relative_value_iteration(bt, tol)
        rho_a, bias_a = solver.relative_value_iteration(ba, tol)
        q = ba.stage_cost + np.einsum("agh,h->ga", ba.transition, bias_a)
        pol = solver.greedy(q)
        rho_cross = solver.policy_average_cost(bt, pol, tol)
        vd = solver.vanishing_discount(bt)
    run.context.update({"rho_true": rho_t, "rho_approx": rho_a, "rho_cross": rho_cross, "vanishing_discount": vd})

    def s(bid, inputs):
        return bounds.snapping_slack(bid, inputs, extra) + 4.0 * tol

    run.certify("AVG_CONT", base, abs(rho_t - rho_a), s("AVG_CONT", base))
    run.certify("AVG_ROBUST", base, abs(rho_cross - rho_t), s("AVG_ROBUST", base))
    if quantized:
        run.certify("JOINT_AVG", quant, abs(rho_cross - rho_t), s("JOINT_AVG", quant))


def _finish(run: _Run) -> VerifyResult:
    order = {b: i for i, b in enumerate(bounds.BOUND_IDS)}
    reports = sorted(run.reports, key=lambda r: order[r.bound_id])
    if run.timings is not None:
        for r in reports:
            r.timings = dict(run.timings)
    return VerifyResult(scenario=run.scn.name, reports=reports, context=run.context)
