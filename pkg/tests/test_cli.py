import json
from pathlib import Path

import pytest

from radvqa.cli import main


@pytest.fixture(scope="module")
def cli_world(tmp_path_factory) -> Path:
    from conftest import build_world
    root = tmp_path_factory.mktemp("cliworld")
    return build_world(root)


def last_stderr_json(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "subcommand" in capsys.readouterr().out or True

    def test_missing_subcommand_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_missing_config_flag(self, capsys):
        assert main(["ingest"]) == 2

    def test_config_error_exits_two_with_json(self, tmp_path, capsys):
        rc = main(["ingest", "--config", str(tmp_path / "none.toml")])
        assert rc == 2
        err = last_stderr_json(capsys)
        assert err["error"] == "config"
        assert "none.toml" in err["detail"]

    def test_invalid_toml_exits_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[run\n")
        assert main(["ingest", "--config", str(bad)]) == 2
        assert last_stderr_json(capsys)["error"] == "config"

    def test_stage_failure_exits_three_with_stage(self, cli_world, capsys):
        # mix needs qagen output that does not exist yet
        rc = main(["mix", "--config", str(cli_world)])
        assert rc == 3
        err = last_stderr_json(capsys)
        assert err["error"] == "stage"
        assert err["stage"] == "mix"


class TestStages:
    def test_ingest_writes_manifest(self, cli_world, capsys):
        assert main(["ingest", "--config", str(cli_world)]) == 0
        out = cli_world.parent / "out"
        assert (out / "ingest" / "manifest.jsonl").exists()
        assert (out / "ingest" / "train.jsonl").exists()

    def test_stats_prints_json(self, cli_world, capsys):
        assert main(["ingest", "--config", str(cli_world)]) == 0
        capsys.readouterr()
        assert main(["stats", "--config", str(cli_world)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["size"] == 40
        assert sum(report["organ"].values()) == 40

    def test_stats_with_explicit_dataset(self, cli_world, capsys):
        main(["ingest", "--config", str(cli_world)])
        out = cli_world.parent / "out"
        capsys.readouterr()
        assert main(["stats", "--config", str(cli_world),
                     "--dataset", str(out / "ingest" / "val.jsonl")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["size"] == 4

    def test_qagen_then_mix(self, cli_world, capsys):
        assert main(["ingest", "--config", str(cli_world)]) == 0
        assert main(["qagen", "--config", str(cli_world)]) == 0
        assert main(["mix", "--config", str(cli_world)]) == 0
        out = cli_world.parent / "out"
        assert (out / "mix" / "mixed.jsonl").exists()

    def test_scaling_fit_with_override(self, cli_world, tmp_path, capsys):
        points = cli_world.parent / "points.csv"
        rc = main(["scaling-fit", "--config", str(cli_world),
                   "--points", str(points)])
        assert rc == 0
        fit = json.loads(
            (cli_world.parent / "out" / "scaling" / "fit.json").read_text())
        assert abs(fit["alpha"] - 0.3) < 1e-5

    def test_evaluate_needs_a_checkpoint(self, cli_world, capsys):
        rc = main(["evaluate", "--config", str(cli_world),
                   "--checkpoint", str(cli_world.parent / "missing.ckpt")])
        assert rc == 3
        assert last_stderr_json(capsys)["stage"] == "evaluate"


class TestServe:
    def test_missing_checkpoint_file(self, cli_world, capsys):
        rc = main(["serve", "--config", str(cli_world),
                   "--checkpoint", str(cli_world.parent / "missing.ckpt"),
                   "--data-dir", str(cli_world.parent / "svc")])
        assert rc == 3
        assert last_stderr_json(capsys)["stage"] == "serve"
