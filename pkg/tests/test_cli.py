import json

import numpy as np
import pytest

from consensus_ukf.cli import (
    EXIT_DIVERGED,
    EXIT_INVALID,
    EXIT_OK,
    OUT_ENV,
    main,
    parse_seeds,
    read_trace_csv,
    trace_columns,
    trace_matrix,
)
from consensus_ukf.scenario import load_preset
from consensus_ukf.simnet import run_scenario

SHORT = ["--set", "duration=3", "--set", "references=[{start: 0, value: 10}]"]


def test_run_writes_trace_and_metrics(tmp_path, capsys):
    assert main(["run", "cruise.scn", "--out", str(tmp_path), "--set", "rng_seed=7", *SHORT]) == EXIT_OK
    header, data = read_trace_csv(tmp_path / "trace.csv")
    assert header[:2] == ["t", "x_true_v"]
    assert "y_node4_v" in header and "xhat_node1_v" in header and "u_u" in header and "e_node2_v" in header
    assert data.shape == (301, len(header))
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["rng_seed"] == 7 and set(metrics["rmse"]) == {"node1", "node2", "node3", "node4"}
    assert "rmse_v" in capsys.readouterr().out


def test_csv_round_trip_exact(tmp_path):
    main(["run", "aircraft", "--out", str(tmp_path), "--set", "duration=2",
          "--set", "references=[{start: 0, value: 0.2}]"])
    header, data = read_trace_csv(tmp_path / "trace.csv")
    s = load_preset("aircraft", ["duration=2", "references=[{start: 0, value: 0.2}]"])
    tr, _ = run_scenario(s)
    assert header == trace_columns(tr)
    assert np.array_equal(data, trace_matrix(tr), equal_nan=True)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert len({len(l.split(",")) for l in lines}) == 1


def test_rerun_bitwise_identical(tmp_path):
    for sub in ("a", "b"):
        assert main(["run", "motor_speed", "--out", str(tmp_path / sub), "--set", "duration=1",
                     "--set", "references=[{start: 0, value: 1}]"]) == EXIT_OK
    assert (tmp_path / "a/trace.csv").read_bytes() == (tmp_path / "b/trace.csv").read_bytes()


def test_seed_range(tmp_path):
    assert main(["run", "cruise", "--out", str(tmp_path), "--seeds", "3..5", *SHORT]) == EXIT_OK
    for seed in (3, 4, 5):
        m = json.loads((tmp_path / f"seed_{seed}" / "metrics.json").read_text())
        assert m["rng_seed"] == seed
    assert parse_seeds("2..2") == [2] and parse_seeds("4") == [4]


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envdir"))
    assert main(["run", "cruise", *SHORT]) == EXIT_OK
    assert (tmp_path / "envdir" / "trace.csv").exists()


def test_validate_presets(capsys):
    for name in ("cruise.scn", "suspension.scn", "aircraft.scn", "motor_speed.scn", "motor_position.scn"):
        assert main(["validate", name]) == EXIT_OK
    assert "perron vector" in capsys.readouterr().out


def test_validate_not_primitive(capsys):
    code = main(["validate", "cruise", "--set", "network.topology=explicit",
                 "--set", "network.Pi=[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]"])
    assert code == EXIT_INVALID
    assert "not primitive" in capsys.readouterr().err


def test_validate_negative_mass(capsys):
    assert main(["validate", "cruise", "--set", "plant.params.m=-1000"]) == EXIT_INVALID
    assert "plant.params.m" in capsys.readouterr().err


def test_unknown_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("plant: {type: cruise}\nts: 0.01\nduration: 1\nfilterr: {}\n")
    assert main(["run", str(bad), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "bad.scn:4" in capsys.readouterr().err


def test_missing_file(capsys):
    assert main(["validate", "does/not/exist.scn"]) == EXIT_INVALID


def test_divergence_exit_code(tmp_path, capsys):
    code = main(["run", "motor_position", "--out", str(tmp_path), "--set", "controller.design=continuous",
                 "--set", "duration=4", "--set", "references=[{start: 0, value: 1}]"])
    assert code == EXIT_DIVERGED
    assert "diverged at step" in capsys.readouterr().err


def test_compare_outputs(tmp_path, capsys):
    assert main(["compare", "cruise", "--out", str(tmp_path), *SHORT]) == EXIT_OK
    for f in ("trace_consensus.csv", "trace_centralized.csv", "trace_isolated.csv", "ratios.csv"):
        assert (tmp_path / f).exists()
    rows = (tmp_path / "ratios.csv").read_text().splitlines()
    assert len(rows) == 5 and rows[0].startswith("node,")


def test_compare_single_node_ratios(tmp_path):
    assert main(["compare", "cruise", "--out", str(tmp_path), "--set", "network.nodes=1", *SHORT]) == EXIT_OK
    import csv
    with (tmp_path / "ratios.csv").open() as fh:
        row = next(csv.DictReader(fh))
    assert float(row["consensus_over_centralized"]) == pytest.approx(1.0, abs=1e-10)
    assert float(row["consensus_over_isolated"]) == pytest.approx(1.0, abs=1e-10)


def test_l_zero_run_matches_isolated_arm(tmp_path):
    args = ["--set", "duration=2", "--set", "references=[{start: 0, value: 1}]", "--set", "network.l=0"]
    main(["run", "motor_speed", "--out", str(tmp_path / "run"), *args])
    main(["compare", "motor_speed", "--out", str(tmp_path / "cmp"), *args])
    _, a = read_trace_csv(tmp_path / "run/trace.csv")
    _, b = read_trace_csv(tmp_path / "cmp/trace_isolated.csv")
    assert np.array_equal(a, b, equal_nan=True)


def test_suspension_run_reports_settling(tmp_path):
    assert main(["run", "suspension", "--out", str(tmp_path), "--set", "network.nodes=1"]) == EXIT_OK
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["settling_time"] is not None and m["settling_time"] < 5.0
