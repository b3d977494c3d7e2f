from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from beliefbounds.model import FiniteMetricSpace, PomdpModel

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")


def stochastic(rng: np.random.Generator, shape, conc: float = 1.0) -> np.ndarray:
    """Random row-stochastic array; the last axis sums to one."""
    return rng.dirichlet(np.full(shape[-1], conc), size=shape[:-1])


def random_pomdp(rng, n_x: int, n_y: int, n_u: int, coords=None, name="random") -> PomdpModel:
    if coords is None:
        coords = np.sort(rng.random(n_x))
    space = FiniteMetricSpace.from_coordinates(coords)
    return PomdpModel(
        state_space=space,
        action_labels=tuple(f"u{k}" for k in range(n_u)),
        obs_space=FiniteMetricSpace.discrete(n_y),
        kernel=stochastic(rng, (n_u, n_x, n_x)),
        channel=stochastic(rng, (n_x, n_y)),
        cost=rng.random((n_x, n_u)),
        prior=np.full(n_x, 1.0 / n_x),
        name=name,
    )


def random_perturbation(rng, model: PomdpModel, eps_t: float, eps_q: float) -> PomdpModel:
    """Mix each kernel and channel row with an independent random row."""
    kernel = (1 - eps_t) * model.kernel + eps_t * stochastic(rng, model.kernel.shape)
    channel = (1 - eps_q) * model.channel + eps_q * stochastic(rng, model.channel.shape)
    return model.with_(kernel=kernel, channel=channel, name=model.name + "/perturbed")


def two_state_model(**changes) -> PomdpModel:
    sp = FiniteMetricSpace.from_coordinates([0.0, 1.0], labels=["good", "worn"])
    model = PomdpModel(
        state_space=sp,
        action_labels=("run", "fix"),
        obs_space=FiniteMetricSpace.from_coordinates([0.0, 1.0], labels=["quiet", "noisy"]),
        kernel=[[[0.7, 0.3], [0.4, 0.6]], [[0.9, 0.1], [0.8, 0.2]]],
        channel=[[0.8, 0.2], [0.3, 0.7]],
        cost=[[0.0, 0.5], [1.0, 0.7]],
        prior=[0.5, 0.5],
        discount=0.9,
        name="two_state",
    )
    return model.with_(**changes) if changes else model


@pytest.fixture
def two_state():
    return two_state_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
