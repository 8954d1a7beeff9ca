import json
import logging

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

import main
from graph.fanout import fanout_breathers, route_after_continuation, route_cascade, route_next
from kam.embedding import evaluate_grid, zero
from kam.errors import ContinuationBreakdown, NoConvergence, StateFileError
from kam.kam_step import make_state
from nodes.continuation import continue_in_eps
from nodes.couple_solve import couple_solve_node
from nodes.router import router_node
from nodes.single_site import build_breather
from schemas import (SILVER, CascadePlan, DecayConfig, ExperimentConfig, ExperimentSection, FrequencyConfig,
                     ModelConfig, SolverConfig)
from utils import load_config, load_state, save_state, write_csv

from conftest import EPS, OMEGA, coupled_cfg


@pytest.fixture
def small_cfg(model_cfg, solver) -> ExperimentConfig:
    return ExperimentConfig(model=model_cfg, solver=solver)


# ─── state files ─────────────────────────────────────────────
def test_state_round_trip_is_bit_exact(tmp_path, breather, model_cfg):
    path = save_state(tmp_path / "b.json", breather, model_cfg, {"error": breather.error})
    state, cfg, diagnostics = load_state(path)
    np.testing.assert_array_equal(state.K.coeffs, breather.K.coeffs)
    np.testing.assert_array_equal(state.K.sites, breather.K.sites)
    np.testing.assert_array_equal(state.omega, breather.omega)
    np.testing.assert_array_equal(state.lam, breather.lam)
    assert state.K.grid_size == breather.K.grid_size
    np.testing.assert_equal([r.as_row() for r in state.history], [r.as_row() for r in breather.history])
    assert cfg == model_cfg
    assert diagnostics["error"] == breather.error


def test_state_file_version_and_hash_are_checked(tmp_path, breather, model_cfg):
    path = save_state(tmp_path / "b.json", breather, model_cfg)
    data = json.loads(open(path).read())

    bad_version = dict(data, schemaVersion=99)
    (tmp_path / "v.json").write_text(json.dumps(bad_version))
    with pytest.raises(StateFileError):
        load_state(tmp_path / "v.json")

    bad_model = dict(data, model=dict(data["model"], epsilon=0.5))
    (tmp_path / "h.json").write_text(json.dumps(bad_model))
    with pytest.raises(StateFileError):
        load_state(tmp_path / "h.json")

    corrupted = dict(data, coeffsRe=data["coeffsRe"][:-1])
    (tmp_path / "c.json").write_text(json.dumps(corrupted))
    with pytest.raises(StateFileError):
        load_state(tmp_path / "c.json")

    (tmp_path / "j.json").write_text("{not json")
    with pytest.raises(StateFileError):
        load_state(tmp_path / "j.json")


def test_csv_carries_the_schema_version(tmp_path):
    path = write_csv(tmp_path / "t.csv", pd.DataFrame({"m": [8, 16], "error": [1e-3, 1e-5]}))
    table = pd.read_csv(path)
    assert list(table.columns) == ["schema_version", "m", "error"]
    assert (table["schema_version"] == 1).all()


# ─── configuration ───────────────────────────────────────────
def test_unknown_config_keys_are_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": {"epsilon": 0.01, "typo": 1}}))
    with pytest.raises(ValidationError):
        load_config(str(path))


def test_config_defaults_and_presets():
    cfg = load_config(None)
    assert cfg.frequency.resolved() == [pytest.approx(OMEGA)]
    with pytest.raises(ValueError):
        DecayConfig(rates=[0.25, 0.5])
    with pytest.raises(ValueError):
        DecayConfig(rates=[0.5], beta_tilde=0.5)


def test_cascade_plan_lengths_are_validated():
    with pytest.raises(ValueError):
        CascadePlan(frequencies=[0.06, 0.04], separations=[], decay_schedule=[0.5, 0.4],
                    band_schedule=[16, 16], tol_schedule=[1e-10, 1e-10])
    with pytest.raises(ValueError):
        CascadePlan(frequencies=[0.06, 0.04], separations=[24], decay_schedule=[0.4, 0.5],
                    band_schedule=[16, 16], tol_schedule=[1e-10, 1e-10])


# ─── routing ─────────────────────────────────────────────────
def test_router_validates_the_verb(small_cfg):
    with pytest.raises(ValueError):
        router_node({"verb": "bogus", "config": small_cfg})
    with pytest.raises(ValueError):
        router_node({"verb": "couple", "config": small_cfg})
    with pytest.raises(ValueError):
        router_node({"verb": "cascade", "config": small_cfg})
    out = router_node({"verb": "single-site", "config": small_cfg})
    assert out["stage"] == 0 and out["summary"]["verb"] == "single-site"


def test_router_rejects_couplings_beyond_the_interaction_limit(small_cfg):
    model = small_cfg.model.model_copy(update={"interaction_limit": 1.0})
    with pytest.raises(ValueError, match="interaction_limit"):
        router_node({"verb": "single-site", "config": small_cfg.model_copy(update={"model": model})})


def test_router_accepts_a_cascade_plan(small_cfg):
    plan = CascadePlan(frequencies=[OMEGA, 0.1 * SILVER], separations=[24], decay_schedule=[0.5, 0.4],
                       band_schedule=[16, 16], tol_schedule=[1e-10, 1e-10])
    cfg = small_cfg.model_copy(update={"experiment": ExperimentSection(cascade=plan)})
    out = router_node({"verb": "cascade", "config": cfg})
    assert len(out["summary"]["kappa"]) == 2


def test_fanout_and_routes(small_cfg):
    cfg = small_cfg.model_copy(update={"frequency": FrequencyConfig(presets=["golden", "silver"])})
    state = {"verb": "couple", "config": cfg, "out_dir": "out"}
    sends = fanout_breathers(state)
    assert [s.node for s in sends] == ["single_site", "single_site"]
    assert [s.arg["index"] for s in sends] == [0, 1]
    assert route_next(dict(state, verb="cascade")) == "cascade_stage"
    assert route_after_continuation(dict(state, verb="continue")) == "report"
    scan = route_after_continuation(dict(state, continued=["a", "b"], eps=0.02))
    assert [s.arg["m"] for s in scan] == cfg.experiment.distances

    plan = CascadePlan(frequencies=[OMEGA, 0.1 * SILVER], separations=[24], decay_schedule=[0.5, 0.4],
                       band_schedule=[16, 16], tol_schedule=[1e-10, 1e-10])
    cascade_cfg = cfg.model_copy(update={"experiment": ExperimentSection(cascade=plan)})
    assert route_cascade({"config": cascade_cfg, "stage": 1}) == "cascade_stage"
    assert route_cascade({"config": cascade_cfg, "stage": 2}) == "report"


# ─── command line ────────────────────────────────────────────
def test_check_frequency_prints_reports(capsys):
    assert main.main(["check-frequency"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert reports[0]["resonant"] is False
    assert reports[0]["omega"] == [pytest.approx(OMEGA)]


def test_check_decay_passes_for_the_defaults(capsys):
    assert main.main(["check-decay"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert [r["rate"] for r in reports] == [0.0, 0.5]
    assert all(r["passed"] for r in reports)


def test_invalid_config_exits_with_one(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"solver": {"tol": "tiny"}}))
    assert main.main(["check-frequency", "--config", str(path)]) == 1


def test_diagnose_flags_a_degenerate_embedding(tmp_path, model, model_cfg, small_cfg):
    K = zero(model.sites, [[0]], 4)
    path = save_state(tmp_path / "zero.json", make_state(K, OMEGA), model_cfg)
    report = main.diagnose(path, small_cfg)
    assert report.error_sup == 0.0
    assert "degenerate-embedding" in report.flags
    assert not report.ok


def test_diagnose_converged_and_tampered_states(tmp_path, breather, model_cfg, small_cfg):
    path = save_state(tmp_path / "b.json", breather, model_cfg, {"error": breather.error})
    report = main.diagnose(path, small_cfg)
    assert report.ok, report.flags
    assert report.error_sup == pytest.approx(breather.error, rel=1e-6, abs=1e-15)

    data = json.loads(open(path).read())
    k = data["kmax"]
    S = len(data["sites"])
    flat = (k + 1) * (2 * S) + S // 2
    data["coeffsRe"][flat] = (float.fromhex(data["coeffsRe"][flat]) + 1e-3).hex()
    tampered = tmp_path / "t.json"
    tampered.write_text(json.dumps(data))
    report = main.diagnose(str(tampered), small_cfg)
    assert "error-spike" in report.flags
    assert report.error_sup > 1e-5


# ─── experiments ─────────────────────────────────────────────
def test_continuation_in_epsilon(small_cfg, breather):
    steps = list(continue_in_eps(small_cfg, breather, [0.0, 0.005]))
    assert [eps for eps, _ in steps] == [0.0, 0.005]
    for _, state in steps:
        assert state.error < small_cfg.solver.tol
        assert float(np.abs(state.lam).max()) <= 1e-9


def test_single_site_verb_runs_end_to_end(tmp_path, small_cfg):
    out = main.run("single-site", small_cfg, str(tmp_path))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["verb"] == "single-site"
    assert summary["breathers"][0]["error"] < small_cfg.solver.tol
    assert (tmp_path / "breather_0_eps0.json").exists()
    assert (tmp_path / "breather_0_newton.csv").exists()
    assert len(out["continued"]) == 1


def test_failed_epsilon_step_is_halved(small_cfg, breather):
    steps = list(continue_in_eps(small_cfg, breather, [0.0, 0.02]))
    assert [eps for eps, _ in steps] == [0.0, 0.02]
    assert steps[-1][1].error < small_cfg.solver.tol


def test_continuation_breaks_down_below_the_smallest_step(small_cfg, breather, monkeypatch, caplog):
    def solve_up_to_one_percent(model, state, solver, gamma=None, **kwargs):
        if model.cfg.epsilon > 0.01:
            raise NoConvergence("diverged", [], state)
        return state

    monkeypatch.setattr("nodes.continuation.solve", solve_up_to_one_percent)
    with caplog.at_level(logging.WARNING, logger="nodes.continuation"), \
            pytest.raises(ContinuationBreakdown) as err:
        list(continue_in_eps(small_cfg, breather, [0.0, 0.02]))
    assert err.value.last_good_eps == pytest.approx(0.01)
    assert "retrying at ε=0.01" in caplog.text


def test_continued_breather_stays_localized():
    cfg = ExperimentConfig(model=ModelConfig(window_radius=24), solver=SolverConfig(kmax=32, tol=1e-11))
    *_, (eps, state) = continue_in_eps(cfg, build_breather(cfg, OMEGA), cfg.experiment.eps_schedule)
    assert eps == EPS
    values = evaluate_grid(state.K)
    S = state.K.n_sites

    def deviation(site):
        j = state.K.site_index([site])
        return np.abs(values[:, [j, S + j]]).max()

    for site in (-10, 10):
        assert deviation(site) <= 1e-6 * deviation(0)


def test_couple_node_reconverges_the_two_frequency_torus(tmp_path, narrow_pair):
    cfg = coupled_cfg(3, tol=1e-9)
    update = couple_solve_node({"config": cfg, "eps": EPS, "continued": narrow_pair,
                                "out_dir": str(tmp_path)})
    coupled, report = update["coupled"], update["summary"]["coupled"]
    assert coupled.l == 2 and coupled.error <= 1e-9
    assert report["separation"] == 4
    assert report["nondegeneracy_within_25pct"], report["drift"]
    assert (tmp_path / "coupled_m4.json").exists()
    assert (tmp_path / "coupled_m4_newton.csv").exists()
    # the isotropy defect falls with the invariance error
    for previous, current in zip(coupled.history, coupled.history[1:]):
        if previous.error_sup >= 2 * current.error_sup and previous.isotropy > 1e-12:
            assert current.isotropy <= previous.isotropy / 2


def test_fixed_seed_gives_identical_outputs(tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"model": {"window_radius": 3}, "solver": {"kmax": 32},
                                  "frequency": {"values": [OMEGA]},
                                  "experiment": {"perturbation": 1e-5}}))
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main.main(["single-site", "--config", str(config), "--out", str(out), "--seed", "7"]) == 0
        runs.append(out)
    for artifact in ("breather_0_eps0.json", "breather_0_newton.csv"):
        assert (runs[0] / artifact).read_bytes() == (runs[1] / artifact).read_bytes()
