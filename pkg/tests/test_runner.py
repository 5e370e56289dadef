import filecmp
import json
import subprocess
import sys
from dataclasses import replace

import pytest

from d2dmtc import runner
from d2dmtc.runner import (EXIT_CONFIG, EXIT_CONTRACT, EXIT_OK, ConfigError, ContractViolation,
                           RunConfig, compare_methods, config_from_dict, config_to_dict,
                           load_config, main, prepare, run_scenario)

SMALL = {"deployment": {"n_devices": 300}, "seed": 5}
ARTIFACTS = ["summary.json", "cdf_battery.csv", "devices.csv", "clusters.csv", "assignments.csv",
             "energy.csv"]


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"sede": 3})
    with pytest.raises(ConfigError):
        config_from_dict({"tms": {"bl_treshold": 10.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"tms": 3})
    with pytest.raises(ConfigError):
        config_from_dict({"clustering": {"a_sector": -1.0}})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


def test_config_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 9, "methods": ["kmeans", "distance-csi"],
                            "channel": {"shadowing": True}, "clustering": {"a_sector": 2500.0}})
    d = config_to_dict(cfg)
    assert config_from_dict(json.loads(json.dumps(d))) == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert load_config(p) == cfg
    assert config_from_dict({}) == RunConfig()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_byte_identical_artifacts(tmp_path):
    cfg = config_from_dict({**SMALL, "methods": ["distance-csi"]})
    for sub in ("a", "b"):
        run_scenario(replace(cfg, out_dir=str(tmp_path / sub)))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", ARTIFACTS,
                                               shallow=False)
    assert sorted(match) == sorted(ARTIFACTS) and not mismatch and not errors


def test_seed_changes_deployment():
    a = prepare(config_from_dict(SMALL))
    b = prepare(config_from_dict({**SMALL, "seed": 6}))
    assert (a.table.x != b.table.x).any()


def test_compare_single_equals_run(tmp_path):
    cfg = config_from_dict({**SMALL, "methods": ["kmeans"]})
    sc = prepare(cfg)
    one = run_scenario(cfg, sc).summary
    many = compare_methods(replace(cfg, out_dir=str(tmp_path)), scenario=sc,
                           include_baseline=True)
    assert [s.label for s in many] == ["baseline", "kmeans"]
    assert many[1] == one
    assert (tmp_path / "comparison.csv").exists()
    assert (tmp_path / "baseline" / "summary.json").exists()
    assert many[0].mode_counts["relay"] == many[0].mode_counts["remote"] == 0


def test_every_device_assigned_once():
    res = run_scenario(config_from_dict({**SMALL, "methods": ["geometric"]}))
    assert sorted(res.assignments) == sorted(res.reports) == list(range(300))
    assert sum(res.summary.mode_counts.values()) == 300
    assert res.k == 60


def test_cli_ok(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    rc = main(["--config", str(cfg), "--method", "geometric", "--out", str(tmp_path / "o")])
    assert rc == EXIT_OK
    assert "availability=" in capsys.readouterr().out
    assert (tmp_path / "o" / "summary.json").exists()


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert main(["--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("{not json")
    assert main(["--config", str(bad)]) == EXIT_CONFIG
    assert main(["--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG
    assert main(["--days", "-1"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_contract_violation(monkeypatch, capsys):
    def boom(*a, **k):
        raise ContractViolation("protocol", "undefined transition")
    monkeypatch.setattr(runner, "run_scenario", boom)
    assert main(["--method", "geometric"]) == EXIT_CONTRACT
    assert "[protocol]" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"deployment": {"n_devices": 50}}))
    out = subprocess.run([sys.executable, "-m", "d2dmtc", "--config", str(cfg), "--baseline"],
                         capture_output=True, text=True, timeout=300)
    assert out.returncode == EXIT_OK, out.stderr
    assert "baseline" in out.stdout
