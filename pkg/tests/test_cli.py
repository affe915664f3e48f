import asyncio
import csv
import io
import json
import logging

import pytest

from main import main

BASE = ["--sr-true", "0.4", "--theta", "0.7", "--f", "0.05", "--t-years", "20", "--sr-correction", "off"]


def run(argv):
    return asyncio.run(main(argv))


def error_line(err):
    return json.loads(next(line for line in err.splitlines() if line.startswith("{")))


def test_off_json(capsys):
    assert run(["off", *BASE]) == 0
    document = json.loads(capsys.readouterr().out)
    assert set(document) == {"params", "results", "metadata"}
    assert 1.7 <= document["results"][0]["off"] <= 2.4
    assert document["params"]["theta"] == 0.7
    assert document["params"]["sr_correction"] == "off"
    assert "timestamp" not in document["metadata"]


def test_identical_invocations_are_byte_identical(capsys):
    run(["off", *BASE])
    first = capsys.readouterr().out
    run(["off", *BASE])
    assert capsys.readouterr().out == first


def test_stamp_adds_timestamp(capsys):
    run(["poof", *BASE, "--stamp"])
    assert "timestamp" in json.loads(capsys.readouterr().out)["metadata"]


def test_csv_marks_missing_values(capsys):
    argv = ["off", "--sr-true", "0.4", "--theta", "-1000", "--f", "0.05", "--t-years", "20", "--format", "csv"]
    assert run(argv) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    assert rows[0]["poof"] == "NA"
    assert float(rows[0]["off"]) == pytest.approx(1.0)
    assert json.loads(rows[0]["params"])["theta"] == -1000.0


def test_degenerate_f_exits_2(capsys):
    assert run(["density", "--y", "0.36", "--sr-true", "0.4", "--theta", "0.7", "--f", "0", "--t-years", "20"]) == 2
    captured = capsys.readouterr()
    assert captured.out == ""
    payload = error_line(captured.err)
    assert payload["error"] == "degenerate-correlation"
    assert payload["flag"] == "--f"
    assert payload["exit_status"] == 2


def test_unknown_flag_exits_2(capsys):
    assert run(["off", "--sharpe", "0.4"]) == 2
    assert error_line(capsys.readouterr().err)["error"] == "invalid-parameter"


def test_missing_subcommand_exits_2(capsys):
    assert run([]) == 2


def test_undefined_off_exits_3(capsys):
    assert run(["off", "--sr-true", "0", "--theta", "0.7", "--f", "0.05", "--t-years", "20"]) == 3
    assert error_line(capsys.readouterr().err)["error"] == "undefined-off"


def test_density_points(capsys):
    assert run(["density", *BASE, "--y", "0.36", "0.7"]) == 0
    results = json.loads(capsys.readouterr().out)["results"]
    assert [r["y"] for r in results] == [0.36, 0.7]
    assert all(r["rho"] > 0 for r in results)


def test_density_grid(capsys):
    assert run(["density", *BASE, "--y-grid", "0", "1", "5"]) == 0
    assert len(json.loads(capsys.readouterr().out)["results"]) == 5


def test_density_needs_points(capsys):
    assert run(["density", *BASE]) == 2


def test_poa(capsys):
    assert run(["poa", *BASE]) == 0
    record = json.loads(capsys.readouterr().out)["results"][0]
    assert record["poa"] == pytest.approx(record["p_clear"] + (1 - record["p_clear"]) * record["poof"], rel=1e-11)


def test_report_includes_noise_scales(capsys):
    assert run(["report", *BASE, "--n-buckets", "40", "-q"]) == 0
    record = json.loads(capsys.readouterr().out)["results"][0]
    assert record["sigma_slice"] == pytest.approx(record["sigma_tot"] * 40 ** 0.5, rel=1e-11)
    assert record["e_srm_given_below"] < 0.36


def test_min_years(capsys):
    assert run(["min-years", "--sr", "0.5", "--confidence", "0.999"]) == 0
    record = json.loads(capsys.readouterr().out)["results"][0]
    assert 42.8 <= record["years"] <= 43.8
    assert record["sides"] == "two-sided"


def test_min_years_needs_sr(capsys):
    assert run(["min-years"]) == 2


def test_config_file_is_overridden_by_flags(tmp_path, capsys):
    path = tmp_path / "point.cfg"
    path.write_text("# reference point\ntheta = 0.6\nt-years=20\nf = 0.05\nsr_correction=off\n")
    assert run(["off", "--config", str(path), "--theta", "0.7"]) == 0
    params = json.loads(capsys.readouterr().out)["params"]
    assert params["theta"] == 0.7
    assert params["t_years"] == 20.0
    assert params["sr_correction"] == "off"


def test_bad_config_file(tmp_path, capsys):
    path = tmp_path / "broken.cfg"
    path.write_text("theta 0.6\n")
    assert run(["off", "--config", str(path)]) == 2
    assert "line 1" in error_line(capsys.readouterr().err)["message"]


def test_output_file(tmp_path, capsys):
    target = tmp_path / "out" / "off.json"
    assert run(["off", *BASE, "--output", str(target)]) == 0
    assert capsys.readouterr().out == ""
    assert json.loads(target.read_text())["results"][0]["off"] > 1.0


def test_simulate_is_deterministic_across_workers(capsys):
    argv = ["simulate", *BASE, "--n-paths", "5000", "--mode", "gaussian-slice", "--seed", "5"]
    assert run([*argv, "--workers", "1"]) == 0
    serial = capsys.readouterr().out
    assert run([*argv, "--workers", "2"]) == 0
    threaded = capsys.readouterr().out
    assert json.loads(serial)["results"] == json.loads(threaded)["results"]
    document = json.loads(serial)
    assert document["metadata"]["seed"] == 5
    assert "poof" in {row["metric"] for row in document["results"]}


def test_simulate_until_clear_exhaustion_exits_3(capsys):
    argv = ["simulate", *BASE, "--policy", "until-clear", "--max-attempts", "1", "--n-paths", "2000"]
    assert run(argv) == 3
    assert error_line(capsys.readouterr().err)["error"] == "attempts-exhausted"


def test_simulate_maximal(capsys):
    argv = ["simulate", "--sr-true", "0.3", "--theta", "0.7", "--f", "0.1", "--t-years", "10",
            "--policy", "maximal", "--n-paths", "2000"]
    assert run(argv) == 0
    document = json.loads(capsys.readouterr().out)
    assert document["metadata"]["policy"] == "maximal"


def test_grid_axes(capsys):
    assert run(["grid", *BASE, "--axis", "t_years:2:20:3", "--metrics", "off", "poof"]) == 0
    results = json.loads(capsys.readouterr().out)["results"]
    assert [row["t_years"] for row in results] == [2.0, 11.0, 20.0]
    assert all(row["status"] == "ok" for row in results)


def test_grid_preset_csv(capsys):
    assert run(["grid", "--preset", "figure-4", "--format", "csv", "--workers", "2"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 76
    assert json.loads(rows[0]["metadata"])["grid"] == "figure-4"


def test_grid_needs_axes(capsys):
    assert run(["grid", *BASE]) == 2


def test_large_f_warns(capsys, caplog):
    with caplog.at_level(logging.WARNING):
        assert run(["off", "--sr-true", "0.4", "--theta", "0.7", "--f", "0.2", "--t-years", "20"]) == 0
    assert any("f=0.2" in record.getMessage() for record in caplog.records)


@pytest.mark.slow
def test_verify_passes_with_defaults(capsys):
    assert run(["verify", "--workers", "4", "-q"]) == 0
    document = json.loads(capsys.readouterr().out)
    assert document["metadata"]["passed"] is True
    assert document["params"]["sr_true"] == 0.3


def test_grid_preset_applies_fixed_flags(capsys):
    assert run(["grid", "--preset", "figure-5", "--t-years", "40", "--metrics", "off"]) == 0
    document = json.loads(capsys.readouterr().out)
    assert document["metadata"]["fixed"]["t_years"] == 40.0
    assert document["params"]["t_years"] == 40.0
    # untouched values come from the preset, not the command defaults
    assert document["params"]["sr_true"] == 0.5
    assert document["params"]["sr_correction"] == "off"


def test_grid_preset_rejects_swept_flags(capsys):
    assert run(["grid", "--preset", "figure-4", "--f", "0.05"]) == 2
    assert error_line(capsys.readouterr().err)["flag"] == "--f"


def test_verbose_simulate_shows_estimates(capsys):
    assert run(["simulate", *BASE, "--n-paths", "2000", "-v"]) == 0
    captured = capsys.readouterr()
    assert "Samples" in captured.err
    assert "poof" in captured.err
    assert json.loads(captured.out)["metadata"]["policy"] == "one-off"


@pytest.mark.parametrize("name", ["OFFLAB_SEED", "OFFLAB_WORKERS", "OFFLAB_F_ADVISORY_MAX"])
def test_malformed_environment_exits_2(monkeypatch, capsys, name):
    monkeypatch.setenv(name, "plenty")
    assert run(["off", *BASE]) == 2
    captured = capsys.readouterr()
    assert captured.out == ""
    payload = error_line(captured.err)
    assert payload["error"] == "invalid-parameter"
    assert payload["flag"] == name
