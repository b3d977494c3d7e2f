import csv
import json

import numpy as np
import pytest

from beliefbounds import bounds, reports, solver
from beliefbounds.cli import main
from beliefbounds.formats import FormatError, dump_model, load_model, load_scenario, model_to_dict, model_from_dict

from conftest import SCENARIOS, random_pomdp, two_state_model

TWO_STATE = SCENARIOS / "models" / "two_state.yaml"


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path / "out"), *map(str, argv)])


def _jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


# -- formats ----------------------------------------------------------------------


def test_model_round_trip(tmp_path, rng):
    for model in (two_state_model(), random_pomdp(rng, 3, 2, 2)):
        dump_model(model, tmp_path / "m.yaml")
        back = load_model(tmp_path / "m.yaml")
        assert model_to_dict(back) == model_to_dict(model)
        for attr in ("kernel", "channel", "cost", "prior"):
            assert np.array_equal(getattr(back, attr), getattr(model, attr))
        assert np.array_equal(back.state_space.dist, model.state_space.dist)


def test_label_list_gives_discrete_metric():
    doc = model_to_dict(two_state_model())
    doc["observations"] = ["quiet", "noisy"]
    model = model_from_dict(doc)
    assert np.array_equal(model.obs_space.dist, 1 - np.eye(2))


def test_malformed_yaml_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nstates: [a, b\nactions: [u]\n")
    assert run(tmp_path, "validate", bad) == 2
    assert "bad.yaml, line 3" in capsys.readouterr().err


def test_invalid_row_reports_its_line(tmp_path, capsys):
    text = TWO_STATE.read_text().replace("- [0.3, 0.7]", "- [0.3, 0.8]")
    bad = tmp_path / "bad_row.yaml"
    bad.write_text(text)
    lineno = next(i for i, line in enumerate(text.splitlines(), 1) if "[0.3, 0.8]" in line)
    assert run(tmp_path, "validate", bad) == 2
    err = capsys.readouterr().err
    assert "channel" in err and f"line {lineno}" in err
    kernel_bad = tmp_path / "bad_kernel.yaml"
    text = TWO_STATE.read_text().replace("    - [0.8, 0.2]", "    - [0.8, 0.1]")
    kernel_bad.write_text(text)
    lineno = next(i for i, line in enumerate(text.splitlines(), 1) if "[0.8, 0.1]" in line)
    assert run(tmp_path, "validate", kernel_bad) == 2
    err = capsys.readouterr().err
    assert "kernel: row (action=1, state=1)" in err and f"line {lineno}" in err


def test_unknown_key_and_bad_scenario_values(tmp_path):
    (tmp_path / "s1.yaml").write_text(f"model: {TWO_STATE}\ncolour: red\n")
    with pytest.raises(FormatError, match="colour"):
        load_scenario(tmp_path / "s1.yaml")
    (tmp_path / "s2.yaml").write_text(f"model: {TWO_STATE}\nsolver: {{beta: 1.5}}\n")
    with pytest.raises(FormatError) as info:
        load_scenario(tmp_path / "s2.yaml")
    assert info.value.line == 2
    (tmp_path / "s3.yaml").write_text(f"model: {TWO_STATE}\nperturbation: {{n_x: 2}}\n")
    with pytest.raises(FormatError, match="adapter"):
        load_scenario(tmp_path / "s3.yaml")


def test_validate_accepts_shipped_files(tmp_path, capsys):
    for path in [TWO_STATE, SCENARIOS / "models" / "three_state.yaml", *SCENARIOS.glob("*.yaml")]:
        assert run(tmp_path, "validate", path) == 0
    out = capsys.readouterr().out
    assert "valid model" in out and "valid scenario" in out


# -- distance -----------------------------------------------------------------------


def test_distance_same_file_is_zero(tmp_path):
    assert run(tmp_path, "distance", TWO_STATE, TWO_STATE) == 0
    rows = _jsonl(tmp_path / "out" / "distance.jsonl")
    assert len(rows) == 6 and all(r["distance"] == 0.0 for r in rows)
    assert all(r["schema_version"] == 1 for r in rows)


def test_distance_of_mixed_channel(tmp_path):
    eps = 0.15
    base = two_state_model()
    mixed = base.with_(channel=(1 - eps) * base.channel + eps * 0.5)
    dump_model(mixed, tmp_path / "mixed.yaml")
    assert run(tmp_path, "distance", TWO_STATE, tmp_path / "mixed.yaml", "--metric", "TV") == 0
    rows = _jsonl(tmp_path / "out" / "distance.jsonl")
    tv = {r["target"]: r["distance"] for r in rows}
    assert tv["kernel"] == 0.0
    assert 0 < tv["channel"] <= 2 * eps + 1e-12


def test_distance_incompatible_models(tmp_path, rng):
    dump_model(random_pomdp(rng, 3, 2, 2), tmp_path / "three.yaml")
    assert run(tmp_path, "distance", TWO_STATE, tmp_path / "three.yaml") == 3


# -- verify -----------------------------------------------------------------------


def test_verify_zero_perturbation(tmp_path):
    assert run(tmp_path, "verify", SCENARIOS / "zero_perturbation.yaml") == 0
    rows = _jsonl(tmp_path / "out" / "reports.jsonl")
    assert rows and all(r["pass"] for r in rows)
    # distances vanish exactly; value gaps vanish up to the solver tolerance (2 tol, tol = 1e-8)
    for r in rows:
        assert r["lhs"] == "nan" or abs(float(r["lhs"])) <= 2e-8, r["bound_id"]
        if r["bound_id"] in ("MAIN1", "MAIN2", "W1MAIN1", "W1MAIN2", "PRED_TV", "PRED_TV_REF"):
            assert r["lhs"] == 0.0
    with open(tmp_path / "out" / "reports.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert [t["bound_id"] for t in table] == [r["bound_id"] for r in rows]
    assert all(reports.recheck(t) == (t["pass"] == "true") for t in table)
    context = json.loads((tmp_path / "out" / "context.json").read_text())
    assert context["constants_true"]["k2"] == pytest.approx(0.6)


def test_verify_flags_beta_k2_at_least_one(tmp_path):
    base = two_state_model(kernel=[np.eye(2), [[0.9, 0.1], [0.1, 0.9]]])
    dump_model(base, tmp_path / "sticky.yaml")
    (tmp_path / "sticky_scn.yaml").write_text(
        "model: sticky.yaml\nperturbation: {channel_mix: 0.1}\nsolver: {beta: 0.9, grid_m: 8}\n"
    )
    assert run(tmp_path, "verify", tmp_path / "sticky_scn.yaml") == 0
    rows = {r["bound_id"]: r for r in _jsonl(tmp_path / "out" / "reports.jsonl")}
    for bid in ("DISC_CONT", "DISC_ROBUST"):
        assert rows[bid]["status"] == "n/a"
        assert rows[bid]["rhs"] == "inf"
        assert rows[bid]["assumption_flags"]["beta_k2_lt_1"] is False
    assert rows["MAIN1"]["status"] == "pass"


def test_verify_reports_failures_with_exit_one(tmp_path, monkeypatch):
    real = bounds.evaluate_bound

    def tight(bid, inputs):
        spec = real(bid, inputs)
        return spec if bid != "MAIN1" else bounds.BoundSpec(bid, spec.inputs, 0.0, spec.assumption_flags)

    monkeypatch.setattr(bounds, "evaluate_bound", tight)
    assert run(tmp_path, "verify", SCENARIOS / "channel_mix.yaml") == 1
    rows = {r["bound_id"]: r for r in _jsonl(tmp_path / "out" / "reports.jsonl")}
    assert rows["MAIN1"]["status"] == "fail" and rows["MAIN1"]["pass"] is False


def test_non_convergence_exit_code(tmp_path, monkeypatch):
    def stuck(*args, **kwargs):
        raise solver.NonConvergence("stuck", {"last_step": 1.0})

    monkeypatch.setattr(solver, "value_iteration", stuck)
    assert run(tmp_path, "verify", SCENARIOS / "zero_perturbation.yaml") == 4


def test_recheck_matches_pass_flag():
    rows = [
        {"lhs": 1.0, "rhs": 1.0, "slack": 0.0},
        {"lhs": 1.1, "rhs": 1.0, "slack": 0.05},
        {"lhs": "nan", "rhs": "inf", "slack": 0.0},
    ]
    assert [reports.recheck(r) for r in rows] == [True, False, True]


# -- solve / sweep --------------------------------------------------------------------


def test_solve_constant_cost(tmp_path):
    dump_model(two_state_model(cost=np.full((2, 2), 2.0)), tmp_path / "flat.yaml")
    assert run(tmp_path, "solve", tmp_path / "flat.yaml", "--beta", "0.75", "--grid-m", "4") == 0
    with open(tmp_path / "out" / "value.csv", newline="") as fh:
        values = [float(r["value"]) for r in csv.DictReader(fh)]
    assert values == pytest.approx([8.0] * 5, abs=1e-7)
    summary = json.loads((tmp_path / "out" / "solve.json").read_text())
    assert summary["value_at_prior"] == pytest.approx(8.0, abs=1e-7)


def test_solve_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        assert main(["--out", str(tmp_path / f"r{k}"), "solve", str(TWO_STATE)]) == 0
        outs.append((tmp_path / f"r{k}" / "value.csv").read_bytes())
    assert outs[0] == outs[1]


def test_solve_needs_a_discount(tmp_path):
    doc = model_to_dict(two_state_model())
    doc.pop("discount", None)
    model = model_from_dict(doc)
    dump_model(model, tmp_path / "nodisc.yaml")
    assert run(tmp_path, "solve", tmp_path / "nodisc.yaml") == 2


def test_sweep_channel_mix_from_zero(tmp_path):
    code = run(tmp_path, "--grid-m", "6", "sweep", SCENARIOS / "channel_mix.yaml", "channel_mix", "0", "0.2")
    assert code == 0
    rows = _jsonl(tmp_path / "out" / "sweep.jsonl")
    main1 = {r["value"]: r for r in rows if r["bound_id"] == "MAIN1"}
    kernel_only = main1[0.0]
    # with the channel untouched only the kernel blend remains
    assert kernel_only["lhs"] < main1[0.2]["lhs"]
    assert all(r["parameter"] == "channel_mix" for r in rows)


def test_sweep_zero_perturbation_main1_vanishes(tmp_path):
    code = run(tmp_path, "--grid-m", "6", "sweep", SCENARIOS / "zero_perturbation.yaml", "channel_mix", "0")
    assert code == 0
    row = next(r for r in _jsonl(tmp_path / "out" / "sweep.jsonl") if r["bound_id"] == "MAIN1")
    assert row["lhs"] <= 1e-12


def test_sweep_state_cells_halve_quant_rhs(tmp_path):
    code = run(tmp_path, "sweep", SCENARIOS / "joint_sigma1.yaml", "n_x", "1", "2", "4")
    assert code == 0
    rows = _jsonl(tmp_path / "out" / "sweep.jsonl")
    rhs = {r["value"]: r["rhs"] for r in rows if r["bound_id"] == "QUANT_STATE"}
    assert rhs[2] == pytest.approx(rhs[1] / 2) and rhs[4] == pytest.approx(rhs[2] / 2)
    summary = json.loads((tmp_path / "out" / "sweep_summary.json").read_text())
    assert summary["rhs_nonincreasing"]["QUANT_STATE"] is True


def test_sweep_rejects_bad_values(tmp_path):
    assert run(tmp_path, "sweep", SCENARIOS / "channel_mix.yaml", "n_x", "two") == 2
    assert run(tmp_path, "sweep", SCENARIOS / "channel_mix.yaml", "sigma", "1.0") == 2
