"""Command-line interface: flag parsing, file round trips, exit codes.

Every invocation goes through cli.main(argv) in-process (exit code returned,
not raised); one test drives the installed console script end to end through
a real subprocess.
"""

import json
import shutil
import subprocess

import numpy as np
import pytest

from orthopanel import cli
from orthopanel.data import (
    CrossSection,
    PanelDataset,
    write_cross_section,
    write_panel,
)
from orthopanel.simulate import DgpConfig, simulate_dgp


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """CSV fixtures: a healthy dynamic panel + cross-section, a logit
    cross-section, an id-mangled cross-section, and a rank-deficient panel."""
    root = tmp_path_factory.mktemp("cli_data")
    panel, cross = simulate_dgp(DgpConfig(N=40, T=6, c=1.0, seed=42))
    write_panel(panel, root / "panel.csv")
    write_cross_section(cross, root / "cross.csv")

    truth = panel._latent_truth
    rng = np.random.default_rng(7)
    d = (truth.alpha + rng.normal(0, 0.8, panel.n) > 0).astype(float)
    write_cross_section(CrossSection(cross.w, cross.ids, d),
                        root / "cross_logit.csv")

    mangled = CrossSection(cross.w, np.where(panel.ids == 7, 99, panel.ids))
    write_cross_section(mangled, root / "cross_bad_ids.csv")

    n, t = 24, 5
    flat = PanelDataset(rng.normal(size=(n, t)), np.ones((n, t, 1)),
                        np.arange(1, n + 1))
    write_panel(flat, root / "panel_flat.csv")
    write_cross_section(CrossSection(rng.normal(size=(n, 1)),
                                     np.arange(1, n + 1)),
                        root / "cross_flat.csv")
    return root


def _estimate_args(data_dir, out, extra=()):
    return ["estimate", "--panel", str(data_dir / "panel.csv"),
            "--cross", str(data_dir / "cross.csv"), "--dynamic",
            "--folds", "3", "--splits", "2", "--first-stage", "blundell-bond",
            "--seed", "11", "--out", str(out), *extra]


class TestEstimate:
    def test_round_trip_json(self, data_dir, tmp_path, capsys):
        out = tmp_path / "est.json"
        rc = cli.main(_estimate_args(data_dir, out,
                                     ["--method", "orth-mean", "--print"]))
        assert rc == 0
        payload = json.loads(out.read_text())
        block = payload["results"]["orth-mean"]
        assert len(block["mu_hat"]) == 2
        assert len(block["se"]) == 2
        assert block["n_obs"] == 40
        assert block["diagnostics"]["n_failed"] == 0
        echo = payload["config"]
        assert echo["command"] == "estimate"
        assert echo["folds"] == 3 and echo["splits"] == 2
        assert "threads" not in echo
        # --print mirrors the file on stdout
        assert capsys.readouterr().out == out.read_text()

    def test_multiple_methods(self, data_dir, tmp_path):
        out = tmp_path / "multi.json"
        rc = cli.main(_estimate_args(
            data_dir, out, ["--method", "orth-mean,cgk,naive"]))
        assert rc == 0
        results = json.loads(out.read_text())["results"]
        assert set(results) == {"orth-mean", "cgk", "naive"}
        assert results["cgk"]["n_boot"] == 500
        assert len(results["cgk"]["ci"]) == 2
        assert len(results["naive"]["se"]) == 2

    def test_deterministic_bytes(self, data_dir, tmp_path):
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        args = ["--method", "orth-mean,cgk,naive"]
        assert cli.main(_estimate_args(data_dir, out1, args)) == 0
        assert cli.main(_estimate_args(data_dir, out2, args)) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_logit_model(self, data_dir, tmp_path):
        out = tmp_path / "logit.json"
        rc = cli.main(["estimate", "--panel", str(data_dir / "panel.csv"),
                       "--cross", str(data_dir / "cross_logit.csv"),
                       "--dynamic", "--model", "logit", "--method", "orth-mean",
                       "--folds", "3", "--splits", "1",
                       "--first-stage", "blundell-bond",
                       "--out", str(out)])
        assert rc == 0
        block = json.loads(out.read_text())["results"]["orth-mean"]
        assert len(block["mu_hat"]) == 2  # effect loading + one covariate

    def test_baselines_need_linear_model(self, data_dir, tmp_path, capsys):
        rc = cli.main(["estimate", "--panel", str(data_dir / "panel.csv"),
                       "--cross", str(data_dir / "cross_logit.csv"),
                       "--model", "logit", "--method", "naive",
                       "--out", str(tmp_path / "x.json")])
        assert rc == 2
        assert "linear" in capsys.readouterr().err

    def test_config_file_merging(self, data_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(
            {"method": "naive", "folds": 3, "splits": 4}))
        out = tmp_path / "merged.json"
        rc = cli.main(["estimate", "--panel", str(data_dir / "panel.csv"),
                       "--cross", str(data_dir / "cross.csv"), "--dynamic",
                       "--config", str(cfg_path), "--splits", "2",
                       "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["config"]["folds"] == 3      # from the file
        assert payload["config"]["splits"] == 2     # flag wins
        assert set(payload["results"]) == {"naive"}


class TestEstimateErrors:
    def test_id_mismatch_names_first_offender(self, data_dir, tmp_path,
                                              capsys):
        rc = cli.main(["estimate", "--panel", str(data_dir / "panel.csv"),
                       "--cross", str(data_dir / "cross_bad_ids.csv"),
                       "--method", "naive", "--out", str(tmp_path / "x.json")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "id mismatch at row 7" in err

    def test_missing_file(self, data_dir, tmp_path, capsys):
        rc = cli.main(["estimate", "--panel", str(data_dir / "nope.csv"),
                       "--cross", str(data_dir / "cross.csv"),
                       "--out", str(tmp_path / "x.json")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_requires_out_or_print(self, data_dir, capsys):
        rc = cli.main(["estimate", "--panel", str(data_dir / "panel.csv"),
                       "--cross", str(data_dir / "cross.csv")])
        assert rc == 2
        assert "--out" in capsys.readouterr().err

    def test_unknown_method_token(self, data_dir, tmp_path, capsys):
        rc = cli.main(_estimate_args(data_dir, tmp_path / "x.json",
                                     ["--method", "orth-mean,ridge"]))
        assert rc == 2
        assert "ridge" in capsys.readouterr().err

    def test_estimation_failure_exit_code(self, data_dir, tmp_path, capsys):
        # constant regressor: every split's within fit is rank deficient
        rc = cli.main(["estimate", "--panel", str(data_dir / "panel_flat.csv"),
                       "--cross", str(data_dir / "cross_flat.csv"),
                       "--method", "orth-mean", "--folds", "3", "--splits", "2",
                       "--out", str(tmp_path / "x.json")])
        assert rc == 3
        assert "estimation failed" in capsys.readouterr().err


class TestSimulate:
    def _args(self, out, extra=()):
        return ["simulate", "--N", "30", "--T", "6", "--reps", "3",
                "--methods", "naive", "--splits", "1", "--seed", "5",
                "--out", str(out), *extra]

    def test_summary_csv_written(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        assert cli.main(self._args(out, ["--print"])) == 0
        captured = capsys.readouterr()
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# config: ")
        echo = json.loads(lines[0][len("# config: "):])
        assert echo["command"] == "simulate"
        assert echo["N"] == 30 and echo["reps"] == 3
        assert "threads" not in echo and "null_grid" not in echo
        assert lines[1] == "method,c,N,T,bias,std,rmse,rej_prob,n_fail"
        assert len(lines) == 3 and lines[2].startswith("naive,")
        assert captured.out == out.read_text()
        assert "replications done" in captured.err

    def test_one_row_per_method(self, tmp_path):
        out = tmp_path / "two.csv"
        rc = cli.main(["simulate", "--N", "30", "--T", "6", "--reps", "2",
                       "--methods", "naive,cgk", "--splits", "1",
                       "--out", str(out)])
        assert rc == 0
        rows = [l.split(",")[0] for l in out.read_text().splitlines()[2:]]
        assert rows == ["naive", "cgk"]

    def test_deterministic_and_thread_invariant_bytes(self, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
        assert cli.main(self._args(a)) == 0
        assert cli.main(self._args(b)) == 0
        assert cli.main(self._args(c, ["--threads", "2"])) == 0
        assert a.read_bytes() == b.read_bytes() == c.read_bytes()

    def test_profile_defaults(self, tmp_path):
        # both profiles must parse; explicit --reps/--splits keep runs tiny
        out = tmp_path / "paper.csv"
        rc = cli.main(["simulate", "--N", "30", "--T", "6", "--profile",
                       "paper", "--reps", "1", "--splits", "1",
                       "--methods", "naive", "--out", str(out)])
        assert rc == 0
        echo = json.loads(out.read_text().splitlines()[0][len("# config: "):])
        assert echo["profile"] == "paper" and echo["reps"] == 1

        out2 = tmp_path / "desk.csv"
        rc = cli.main(["simulate", "--N", "30", "--T", "6", "--profile",
                       "desk", "--reps", "1", "--methods", "naive",
                       "--out", str(out2)])
        assert rc == 0
        echo2 = json.loads(out2.read_text().splitlines()[0][len("# config: "):])
        # desk profile resolves the unset split count to 5
        assert echo2["splits"] == 5 and echo2["reps"] == 1

    def test_unknown_method(self, tmp_path, capsys):
        rc = cli.main(["simulate", "--N", "30", "--T", "6", "--reps", "1",
                       "--methods", "naive,tsls", "--out",
                       str(tmp_path / "x.csv")])
        assert rc == 2
        assert "tsls" in capsys.readouterr().err


class TestPower:
    def _args(self, out, grid):
        return ["power", "--N", "30", "--T", "6", "--reps", "3",
                "--methods", "naive", "--splits", "1", "--seed", "5",
                "--null-grid", grid, "--out", str(out)]

    def test_single_point_grid(self, tmp_path):
        out = tmp_path / "p1.csv"
        assert cli.main(self._args(out, "1.0:1.0:0.5")) == 0
        lines = out.read_text().splitlines()
        assert lines[1] == "method,null_value,rejection"
        assert len(lines) == 3
        assert lines[2].startswith("naive,1.0,")

    def test_thirteen_point_grid(self, tmp_path):
        out = tmp_path / "p13.csv"
        assert cli.main(self._args(out, "0.4:1.6:0.1")) == 0
        lines = out.read_text().splitlines()
        echo = json.loads(lines[0][len("# config: "):])
        assert echo["null_grid"] == "0.4:1.6:0.1"  # power echoes its grid
        data = lines[2:]
        assert len(data) == 13
        nulls = [float(l.split(",")[1]) for l in data]
        np.testing.assert_allclose(nulls, np.round(np.arange(0.4, 1.65, 0.1), 10),
                                   atol=1e-12)
        for l in data:
            assert 0.0 <= float(l.split(",")[2]) <= 1.0

    def test_rerun_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(self._args(a, "0.8:1.2:0.2")) == 0
        assert cli.main(self._args(b, "0.8:1.2:0.2")) == 0
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("grid", ["1.0:0.5:0.1", "1.0:2.0:0.0", "0.4:1.6"])
    def test_bad_grid_is_config_error(self, tmp_path, grid, capsys):
        rc = cli.main(self._args(tmp_path / "x.csv", grid))
        assert rc == 2
        assert "grid" in capsys.readouterr().err


class TestConsoleScript:
    def test_installed_binary_matches_in_process_run(self, tmp_path):
        exe = shutil.which("orthopanel")
        assert exe, "console script must be on PATH after installation"
        out_sub = tmp_path / "sub.csv"
        out_proc = tmp_path / "proc.csv"
        flags = ["simulate", "--N", "30", "--T", "6", "--reps", "2",
                 "--methods", "naive", "--splits", "1", "--seed", "9"]
        ran = subprocess.run([exe, *flags, "--out", str(out_sub)],
                             capture_output=True, text=True, timeout=300)
        assert ran.returncode == 0, ran.stderr
        assert cli.main([*flags, "--out", str(out_proc)]) == 0
        assert out_sub.read_bytes() == out_proc.read_bytes()
