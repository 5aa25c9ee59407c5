"""Experiment CLI: config validation, artifacts, determinism, exit codes."""

import json
import os

import pytest
from click.testing import CliRunner

from mgtlab.errors import ConfigError, IllConditioned
from mgtlab.expcli import (
    EXIT_CONFIG,
    EXIT_INVERSION,
    ExperimentConfig,
    RunManifest,
    emit_report,
    main,
)

FAST_FORWARD = {
    "grid": {"N": 31},
    "dt": 2e-3,
    "T": 0.5,
    "bank": {"size": 1},
    "potential": {"kind": "bump", "base": 0.1, "amplitude": 0.4, "width": 3.0},
}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = ExperimentConfig.from_dict({}, pipeline="forward")
        assert cfg["grid"]["N"] == 47
        assert cfg["params"]["alpha"] == 0.8
        assert cfg["s"] == 1.3
        assert cfg.pipeline == "forward"

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ExperimentConfig.from_dict({"gird": {}}, pipeline="forward")

    def test_unknown_pipeline(self):
        with pytest.raises(ConfigError, match="pipeline"):
            ExperimentConfig.from_dict({}, pipeline="sideways")

    @pytest.mark.parametrize("patch,msg", [
        ({"dt": 3e-3}, "does not divide"),
        ({"s": 2.5}, "s must lie"),
        ({"params": {"b": -1.0}}, "must be positive"),
        ({"bank": {"window": "w3"}}, "bank.window"),
        ({"bank": {"size": 0}}, "size must be"),
        ({"inversion": {"noise": 0.01, "seed": None}}, "seed is required"),
        ({"inversion": {"orders": [4]}}, "orders"),
        ({"ladders": {"dts": []}}, "positive and non-empty"),
    ])
    def test_validation_rejects(self, patch, msg):
        with pytest.raises(ConfigError, match=msg):
            ExperimentConfig.from_dict(patch, pipeline="forward")

    def test_spec_sections_replace_wholesale(self):
        cfg = ExperimentConfig.from_dict(
            {"potential": {"kind": "constant", "value": 0.2}}, pipeline="forward")
        assert cfg["potential"] == {"kind": "constant", "value": 0.2}

    def test_spec_section_rejects_stray_keys(self):
        with pytest.raises(ConfigError, match="unknown keys in potential"):
            ExperimentConfig.from_dict(
                {"potential": {"kind": "bump", "base": 0.1, "bogus": 1}},
                pipeline="forward")

    def test_canonical_hash_ignores_key_order(self):
        a = ExperimentConfig.from_dict({"dt": 1e-3, "T": 0.5}, pipeline="forward")
        b = ExperimentConfig.from_dict({"T": 0.5, "dt": 1e-3}, pipeline="forward")
        assert a.canonical_hash() == b.canonical_hash()
        c = ExperimentConfig.from_dict({"dt": 1e-3, "T": 1.0}, pipeline="forward")
        assert a.canonical_hash() != c.canonical_hash()

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            ExperimentConfig.load(str(tmp_path / "absent.json"), "forward")

    def test_load_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            ExperimentConfig.load(str(path), "forward")


class TestReport:
    def test_no_checks_line(self, tmp_path):
        man = RunManifest(pipeline="forward", config_hash="abc", version="0",
                          started="now", out_dir=str(tmp_path))
        text = emit_report(man)
        assert "no checks ran" in text
        assert (tmp_path / "summary.txt").read_text() == text

    def test_pass_fail_lines(self, tmp_path):
        man = RunManifest(pipeline="forward", config_hash="abc", version="0",
                          started="now", out_dir=str(tmp_path))
        man.add_check("alpha", 1e-7, 1e-6, True)
        man.add_check("beta", 2.0, 1.0, False)
        text = emit_report(man)
        assert "[PASS] alpha" in text
        assert "[FAIL] beta" in text
        assert not man.all_passed()


class TestCLI:
    def test_missing_config_exits_1(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config",
                                      str(tmp_path / "nope.json")])
        assert result.exit_code == EXIT_CONFIG
        assert "config error" in result.output

    def test_invalid_config_exits_1(self, tmp_path):
        path = write_config(tmp_path, {"dt": 3e-3})
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config", path])
        assert result.exit_code == EXIT_CONFIG

    def test_forward_smoke(self, tmp_path):
        path = write_config(tmp_path, FAST_FORWARD)
        out = tmp_path / "run"
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config", path,
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert "pipeline: forward" in result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["checks"]
        assert manifest["finished"]
        for rel in manifest["artifacts"]:  # recorded relative to the run dir
            assert (out / rel).exists(), rel
        assert (out / "summary.txt").exists()

    def test_quiet_suppresses_report(self, tmp_path):
        path = write_config(tmp_path, FAST_FORWARD)
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config", path,
                                      "--out", str(tmp_path / "q"), "--quiet"])
        assert result.exit_code == 0
        assert result.output == ""

    def test_double_run_is_byte_identical(self, tmp_path):
        path = write_config(tmp_path, FAST_FORWARD)
        runner = CliRunner()
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            result = runner.invoke(main, ["forward", "--config", path,
                                          "--out", str(out), "--seed", "0",
                                          "--quiet"])
            assert result.exit_code == 0, result.output
            outs.append(out)
        names = sorted(os.listdir(outs[0]))
        assert names == sorted(os.listdir(outs[1]))
        for name in names:
            if name == "manifest.json":  # timestamps and out_dir differ
                continue
            a = (outs[0] / name).read_bytes()
            b = (outs[1] / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"

    def test_inversion_failure_exits_3(self, tmp_path, monkeypatch):
        import mgtlab.expcli as expcli

        def boom(cfg, out, rng):
            raise IllConditioned("singular system")

        monkeypatch.setitem(expcli.PIPELINES, "forward", boom)
        path = write_config(tmp_path, FAST_FORWARD)
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config", path,
                                      "--out", str(tmp_path / "x")])
        assert result.exit_code == EXIT_INVERSION
        assert "inversion failed" in result.output

    def test_negative_seed_rejected_by_click(self, tmp_path):
        path = write_config(tmp_path, FAST_FORWARD)
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config", path,
                                      "--seed", "-4"])
        assert result.exit_code == 2
