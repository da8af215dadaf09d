import json

import numpy as np
import pytest

from obslandscape import cli
from obslandscape.dynamics import build_rotor, fluence
from obslandscape.flow import FlowSettings
from obslandscape.harness import (BatchSummary, CaseSpec, ConfigError, RunRecord,
                                  case_one_observable, config_hash, initial_field_shape,
                                  make_case_operators, make_initial_field, make_rng, run_batch,
                                  run_sweep, summarize)
from obslandscape.topology import landscape


def tiny_spec(**kw):
    base = dict(case_id="custom", n_levels=3, dipole_param_d=1.0, total_time=4.0, n_intervals=32,
                initial_fluence=2.0, rho0=(1.0, 0.0, 0.0), theta=(0.0, 0.3, 0.7), n_runs=3,
                seed=123, flow=FlowSettings(abs_tol=1e-6))
    base.update(kw)
    return CaseSpec(**base)


def record(run, outcome="converged", iterations=10, d_min=0.1, d_fail=None):
    return RunRecord(run, outcome, iterations, 0, 0.9, 1.0, 0.0, 10.0, 12.0, d_min, d_min, d_fail, 3)


@pytest.mark.parametrize("seed", [0, 1, 2**63 - 1])
def test_initial_field_fluence_is_exact(seed):
    f = make_initial_field(build_rotor(8, 0.2), 20.0, 512, 10.0, make_rng(seed, 0))
    assert abs(fluence(f) - 10.0) < 1e-10 * 10.0


def test_initial_field_vanishes_at_edges():
    rng = np.random.default_rng(0)
    omegas, amps = rng.uniform(2, 56, 20), rng.uniform(0, 1, 20)
    a0 = 1.0
    assert abs(initial_field_shape(0.0, 20.0, omegas, amps)) <= a0 * np.exp(-12.5) * 20
    assert abs(initial_field_shape(20.0, 20.0, omegas, amps)) <= a0 * np.exp(-12.5) * 20


def test_initial_field_rejects_bad_fluence():
    with pytest.raises(ValueError):
        make_initial_field(build_rotor(3, 0.2), 20.0, 16, 0.0)


def test_substreams_are_independent_of_batch_size():
    a = make_rng(5, 3, 1).uniform(size=4)
    b = make_rng(5, 3, 1).uniform(size=4)
    c = make_rng(5, 4, 1).uniform(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


@pytest.mark.parametrize("m", range(1, 6))
def test_case_one_observables(m):
    theta = case_one_observable(m)
    assert theta.sum() == pytest.approx(1.0, abs=1e-15)
    _, _, tables = landscape(np.eye(8)[0], theta)
    assert len(tables) == 3


def test_theta5_eigenvalues():
    spec = CaseSpec(observable=5)
    rho, theta = make_case_operators(spec)
    np.testing.assert_allclose(sorted(theta, reverse=True), [0.2] + [0.16] * 5 + [0.0] * 2, atol=1e-15)
    np.testing.assert_array_equal(rho, np.eye(8)[0])


@pytest.mark.parametrize("case", ["II", "III"])
def test_random_cases_are_normalized_and_nondegenerate(case):
    spec = CaseSpec(case_id=case)
    for seed in range(20):
        rho, theta = make_case_operators(spec, make_rng(seed, 0))
        assert theta.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.min(np.diff(np.sort(theta))) >= 1e-6
        if case == "III":
            assert np.min(np.diff(np.sort(rho))) >= 1e-6
            assert rho.sum() == pytest.approx(1.0, abs=1e-12)


def test_sorted_operators_option():
    rho, theta = make_case_operators(CaseSpec(case_id="III"), 3, sort=True)
    assert np.all(np.diff(theta) < 0) and np.all(np.diff(rho) < 0)


def test_default_interval_rule():
    assert CaseSpec(case_id="III", n_levels=10).intervals == 2048
    assert CaseSpec(case_id="II", n_levels=9).intervals == 512
    assert CaseSpec(case_id="I", n_levels=16).intervals == 512


def test_config_round_trip_and_hash():
    spec = tiny_spec()
    again = CaseSpec.from_config(json.loads(json.dumps(spec.to_config())))
    assert again == spec and config_hash(again) == config_hash(spec)
    assert config_hash(spec.replace(seed=124)) != config_hash(spec)


@pytest.mark.parametrize("cfg", [
    {"case": "I", "bogus": 1},
    {"case": "IV"},
    {"case": "I", "observable": 6},
    {"case": "I", "rho0": [1, 0]},
    {"case": "custom", "n_levels": 2},
])
def test_config_errors(cfg):
    with pytest.raises(ConfigError):
        CaseSpec.from_config(cfg)


def test_summarize_examples():
    s = summarize([record(0, iterations=7)])
    assert s.mean_search_effort == 7
    s = summarize([record(0, d_min=0.1), record(1, d_min=0.3)])
    assert s.mean_d_sadd_min == pytest.approx(0.2)
    s = summarize([record(0, "failed_decrease", d_fail=0.01), record(1, "failed_decrease", d_fail=0.03)])
    assert s.n_failed == 2 and s.mean_d_sadd_fail == pytest.approx(0.02)
    assert s.mean_search_effort is None and s.mean_d_sadd_min is None


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])


@pytest.fixture(scope="module")
def tiny_batch(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    return run_batch(tiny_spec(), out), out


def test_batch_is_deterministic(tiny_batch):
    summary, _ = tiny_batch
    again = run_batch(tiny_spec())
    assert [r.iterations for r in again.runs] == [r.iterations for r in summary.runs]
    assert again.mean_d_sadd_min == summary.mean_d_sadd_min
    assert summary.n_converged == 3


def test_batch_persists_artifacts(tiny_batch):
    summary, out = tiny_batch
    run_dir = out / f"run-{config_hash(tiny_spec())}"
    assert json.loads((run_dir / "config.json").read_text()) == tiny_spec().to_config()
    stored = BatchSummary.from_dict(json.loads((run_dir / "summary.json").read_text()))
    assert stored.mean_search_effort == summary.mean_search_effort
    assert len(list((run_dir / "traces").glob("run_*.csv"))) == 3


def test_run_order_does_not_matter(tiny_batch):
    summary, _ = tiny_batch
    shuffled = summarize(list(reversed(summary.runs)))
    assert shuffled.mean_search_effort == summary.mean_search_effort
    assert shuffled.mean_d_sadd_min == summary.mean_d_sadd_min


def test_sweep_axis(tmp_path):
    out = run_sweep(tiny_spec(n_runs=1), "fluence", [1.0, 4.0], tmp_path)
    assert [s.config["F0"] for s in out] == [1.0, 4.0]
    assert list(tmp_path.glob("sweep-fluence-*.json"))
    with pytest.raises(ConfigError):
        run_sweep(tiny_spec(), "temperature", [1.0])


def write_config(tmp_path, **kw):
    cfg = tiny_spec().to_config()
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_run_ok(tmp_path, capsys):
    assert cli.main(["run", "--config", write_config(tmp_path, n_runs=1), "--out", str(tmp_path)]) == 0
    assert "MSE=" in capsys.readouterr().out


def test_cli_all_failed(tmp_path):
    path = write_config(tmp_path, n_runs=1, max_steps=1)
    assert cli.main(["run", "--config", path, "--out", str(tmp_path)]) == 4


def test_cli_config_error(tmp_path):
    path = write_config(tmp_path, colour="red")
    assert cli.main(["run", "--config", path, "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_enumeration_cap(tmp_path):
    path = write_config(tmp_path, rho0=[0.5, 0.3, 0.2], n_runs=1)
    assert cli.main(["run", "--config", path, "--out", str(tmp_path), "--cap", "2"]) == 3
    assert cli.main(["topology", "--rho", "0.5,0.3,0.2", "--theta", "0.1,0.2,0.7", "--cap", "2"]) == 3


def test_cli_topology_json(capsys):
    assert cli.main(["topology", "--rho", "0,0,0,1", "--theta", "0.5,0.2,0.2,0.1", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [t["class"] for t in doc["tables"]] == ["global_max", "saddle", "global_min"]
    assert doc["pairwise_distances"] == [[0, 4, 4], [4, 0, 4], [4, 4, 0]]


def test_cli_distance(tmp_path, capsys):
    u = np.eye(4)[[3, 0, 1, 2]]
    path = tmp_path / "u.csv"
    inter = np.empty((4, 8))
    inter[:, 0::2], inter[:, 1::2] = u, 0.0
    np.savetxt(path, inter, delimiter=",")
    assert cli.main(["distance", "--unitary", str(path), "--rho", "0,0,0,1",
                     "--theta", "0.5,0.2,0.2,0.1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert float(lines[0].split()[-1]) == pytest.approx(0.0, abs=1e-14)
