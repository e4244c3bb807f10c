import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from fdepi import cli
from fdepi.pipeline import Config, ConfigError


def _run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().err


class TestConfiguration:
    def test_missing_seed(self, capsys, tmp_path):
        code, err = _run(capsys, "ingest", "--out", str(tmp_path))
        assert code == 1 and "'seed'" in err

    def test_missing_input_names_path(self, capsys, tmp_path):
        missing = tmp_path / "nope.csv"
        code, err = _run(capsys, "ingest", "--seed", "1", "--out", str(tmp_path / "o"), "--dpc", str(missing))
        assert code == 1 and str(missing) in err and "'dpc'" in err

    @pytest.mark.parametrize("flag, value, field", [("--k", "two", "'k'"), ("--alpha", "1.5", "'alpha'"),
                                                    ("--dataset", "FOO", "'dataset'"), ("--seed", "-1", "'seed'")])
    def test_invalid_values(self, capsys, tmp_path, flag, value, field):
        args = ["ingest", "--out", str(tmp_path)]
        if flag != "--seed":
            args += ["--seed", "1"]
        code, err = _run(capsys, *args, flag, value)
        assert code == 1 and field in err

    def test_config_file_and_flag_precedence(self, tmp_path, monkeypatch):
        monkeypatch.delenv("FDEPI_THREADS", raising=False)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nseed = 4\nk = 3\nrestarts = 7\n")
        args = cli.build_parser().parse_args(["motifs", "--config", str(cfg), "--k", "2"])
        c = cli.resolve_config(args)
        assert (c.seed, c.k, c.restarts, c.length) == (4, 2, 7, 65)

    def test_config_file_errors(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("seed 4\n")
        with pytest.raises(ConfigError, match="expected"):
            cli.resolve_config(cli.build_parser().parse_args(["ingest", "--config", str(bad)]))
        bad.write_text("colour = red\n")
        with pytest.raises(ConfigError, match="unknown setting"):
            cli.resolve_config(cli.build_parser().parse_args(["ingest", "--config", str(bad)]))

    def test_threads_environment_fallback(self, monkeypatch):
        monkeypatch.setenv("FDEPI_THREADS", "8")
        assert cli.resolve_config(cli.build_parser().parse_args(["ingest", "--seed", "1"])).threads == 8
        args = cli.build_parser().parse_args(["ingest", "--seed", "1", "--threads", "2"])
        assert cli.resolve_config(args).threads == 2

    def test_digest_ignores_out_and_threads(self, tmp_path):
        a = Config(seed=1, out=tmp_path / "a", threads=1)
        b = Config(seed=1, out=tmp_path / "b", threads=8)
        assert a.digest() == b.digest() != Config(seed=2).digest()


class TestRuns:
    def test_ingest_outputs_and_manifest(self, capsys, tmp_path):
        code, _ = _run(capsys, "ingest", "--seed", "5", "--out", str(tmp_path))
        assert code == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert {"raw_max.csv", "covariates.csv", "imputation_log.txt", "run_manifest.txt"} <= names
        assert not any(n.endswith(".tmp") for n in names)
        manifest = (tmp_path / "run_manifest.txt").read_text()
        assert "command: ingest" in manifest and "seed: 5" in manifest
        assert f"config_sha256: {Config(seed=5, out=tmp_path).digest()}" in manifest
        assert "  raw_max.csv" in manifest

    def test_motifs_subcommand(self, capsys, tmp_path):
        code, _ = _run(capsys, "motifs", "--seed", "7", "--k", "2", "--length", "65", "--out", str(tmp_path))
        assert code == 0
        mem = pd.read_csv(tmp_path / "memberships.csv")
        assert len(mem) == 20 and list(mem.columns) == ["region", "p_1", "p_2", "hard_label"]
        np.testing.assert_allclose(mem[["p_1", "p_2"]].sum(axis=1), 1.0, atol=1e-9)
        assert set(mem["hard_label"]) == {1, 2}
        shifts = pd.read_csv(tmp_path / "shifts.csv")
        assert shifts["assigned_shift"].between(0, 10).all()
        assert (tmp_path / "motifs.svg").read_bytes().startswith(b"<?xml")

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        for d in ("a", "b"):
            assert _run(capsys, "vif", "--seed", "1", "--out", str(tmp_path / d))[0] == 0
        assert (tmp_path / "a" / "vif.csv").read_bytes() == (tmp_path / "b" / "vif.csv").read_bytes()

    def test_numerical_failure_exit_code(self, capsys, tmp_path, monkeypatch):
        def boom(ctx, out):
            raise np.linalg.LinAlgError("singular matrix")
        monkeypatch.setitem(cli.STEPS, "vif", (boom, "scalar-analytics.vif"))
        code, err = _run(capsys, "vif", "--seed", "1", "--out", str(tmp_path))
        assert code == 2 and "scalar-analytics.vif" in err

    def test_console_help_lists_subcommands(self):
        out = subprocess.run([sys.executable, "-m", "fdepi.cli", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for name in ("ingest", "smooth", "motifs", "iwt", "depth", "regress-ff", "regress-fs", "bicluster",
                     "hclust", "pca", "vif", "select", "pipeline"):
            assert name in out.stdout
