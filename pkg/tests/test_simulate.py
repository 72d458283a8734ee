"""Data-generating process and replication harness.

Large draws pin the population moments of the design (effect scale, shock
split, start-up variance, contamination channel); small seeded runs pin the
deterministic replication/summary machinery byte for byte.
"""

import json
import math

import numpy as np
import pytest

from orthopanel.baselines import cgk_estimate, plugin_estimate
from orthopanel.estimator import EstConfig, cross_fit_estimate
from orthopanel.moments import get_model
from orthopanel.panel import extract_alpha, residual_variance, within_fe_ols
from orthopanel.simulate import (
    ALL_METHODS,
    DgpConfig,
    SimSummary,
    Z_CRIT,
    canonical_methods,
    collect_replications,
    power_curve,
    power_csv_text,
    run_replications,
    simulate_dgp,
    summary_csv_text,
    write_power_csv,
    write_summary_csv,
)

DESK = EstConfig(folds=3, splits=1, first_stage="blundell-bond", seed=0)


@pytest.fixture(scope="module")
def centered_draw():
    """N=100k, no AR dependence, no contamination."""
    panel, cross = simulate_dgp(DgpConfig(N=100_000, T=12, seed=7))
    return panel, cross, panel._latent_truth


@pytest.fixture(scope="module")
def persistent_draw():
    """N=50k with AR coefficient 0.5 and contamination scale 4."""
    panel, cross = simulate_dgp(DgpConfig(N=50_000, T=12, beta0=0.5, c=4.0,
                                          seed=8))
    return panel, cross, panel._latent_truth


class TestDgpMoments:
    def test_effect_and_shock_scales(self, centered_draw):
        _, _, truth = centered_draw
        assert 0.48 <= truth.alpha.var() <= 0.52
        assert 0.24 <= truth.u1.var() <= 0.26
        assert 0.24 <= truth.u2.var() <= 0.26
        assert 0.48 <= (truth.u1 + truth.u2).var() <= 0.52

    def test_startup_variance_matches_stationary_target(self, centered_draw):
        _, _, truth = centered_draw
        # beta0 = 0: Var(y0) = Var(alpha) + 1/2 = 1
        assert 0.96 <= truth.y0.var() <= 1.04

    def test_startup_variance_persistent_case(self, persistent_draw):
        panel, _, truth = persistent_draw
        # Var(alpha)/(1-b)^2 + 1/(2(1-b^2)) = 2 + 2/3
        target = 8.0 / 3.0
        assert abs(truth.y0.var() - target) <= 0.05 * target
        # stationary start: the last period has the same variance
        assert abs(panel.y[:, -1].var() - target) <= 0.05 * target

    def test_lag_column_is_previous_level(self, centered_draw):
        panel, _, truth = centered_draw
        np.testing.assert_array_equal(panel.x[:, 1:, 0], panel.y[:, :-1])
        np.testing.assert_array_equal(panel.x[:, 0, 0], truth.y0)
        assert panel.lag_structure

    @pytest.mark.parametrize("fixture", ["centered_draw", "persistent_draw"])
    def test_autoregressive_recursion(self, fixture, request):
        panel, _, truth = request.getfixturevalue(fixture)
        b0 = 0.0 if fixture == "centered_draw" else 0.5
        want = b0 * panel.x[:, :, 0] + truth.alpha[:, None] + truth.u1 + truth.u2
        np.testing.assert_allclose(panel.y, want, atol=1e-12)

    @pytest.mark.parametrize("fixture", ["centered_draw", "persistent_draw"])
    def test_outcome_construction(self, fixture, request):
        panel, cross, truth = request.getfixturevalue(fixture)
        c = 0.0 if fixture == "centered_draw" else 4.0
        k = panel.t_len // 2 - 1
        want = truth.alpha + truth.v - (c / k) * truth.u1[:, :k].sum(axis=1)
        np.testing.assert_allclose(cross.w[:, 0], want, atol=1e-12)

    def test_no_contamination_outcome_noise_independent(self, centered_draw):
        panel, cross, truth = centered_draw
        ubar = (truth.u1 + truth.u2).mean(axis=1)
        noise = cross.w[:, 0] - truth.alpha
        corr = np.corrcoef(noise, ubar)[0, 1]
        assert abs(corr) < 0.01

    def test_unit_loading_on_true_effect(self, persistent_draw):
        _, cross, truth = persistent_draw
        res = plugin_estimate(truth.alpha, cross.w[:, 0])
        assert abs(res.mu_hat[1] - 1.0) <= 4 * res.se[1]

    def test_deterministic_in_seed(self):
        p1, c1 = simulate_dgp(DgpConfig(N=50, T=6, c=2.0, seed=99))
        p2, c2 = simulate_dgp(DgpConfig(N=50, T=6, c=2.0, seed=99))
        p3, _ = simulate_dgp(DgpConfig(N=50, T=6, c=2.0, seed=100))
        np.testing.assert_array_equal(p1.y, p2.y)
        np.testing.assert_array_equal(p1.x, p2.x)
        np.testing.assert_array_equal(c1.w, c2.w)
        assert not np.array_equal(p1.y, p3.y)

    def test_ids_align(self):
        panel, cross = simulate_dgp(DgpConfig(N=20, T=5, seed=1))
        np.testing.assert_array_equal(panel.ids, np.arange(1, 21))
        np.testing.assert_array_equal(panel.ids, cross.ids)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DgpConfig(N=1, T=8)
        with pytest.raises(ValueError):
            DgpConfig(N=10, T=3)
        with pytest.raises(ValueError):
            DgpConfig(N=10, T=8, beta0=1.0)


class TestLatentTruth:
    def test_estimators_never_read_the_truth(self):
        panel, cross = simulate_dgp(DgpConfig(N=45, T=8, c=1.0, seed=11))
        truth = panel._latent_truth
        assert truth.reads == 0

        fs = within_fe_ols(panel, horizon=panel.t_len)
        alphas = extract_alpha(panel, fs.beta, horizon=panel.t_len).alpha
        u2 = residual_variance(fs.residuals, horizon=panel.t_len)
        plugin_estimate(alphas, cross.w)
        cgk_estimate(alphas, cross.w, u2, n_boot=30, seed=5)
        cross_fit_estimate(panel, cross, get_model("linear"), DESK)
        assert truth.reads == 0

        truth.alpha  # an oracle read is counted
        assert truth.reads == 1

    def test_truth_carries_every_latent(self):
        panel, _ = simulate_dgp(DgpConfig(N=10, T=5, seed=12))
        assert set(panel._latent_truth.keys()) == {"alpha", "u1", "u2", "v",
                                                   "y0"}


class TestCanonicalMethods:
    def test_bare_orth_follows_config_shrinkage(self):
        assert canonical_methods(["orth"], DESK) == ["orth-mean"]
        eb = EstConfig(shrinkage="eb")
        assert canonical_methods(["orth"], eb) == ["orth-eb"]
        sure = EstConfig(shrinkage="sure")
        assert canonical_methods(["orth"], sure) == ["orth-sure"]

    def test_passthrough_dedup_and_order(self):
        got = canonical_methods(["cgk", "naive", "cgk"], DESK)
        assert got == ["cgk", "naive"]
        assert canonical_methods(list(ALL_METHODS), DESK) == list(ALL_METHODS)

    def test_rejects_unknown_or_empty(self):
        with pytest.raises(ValueError):
            canonical_methods(["naive", "tsls"], DESK)
        with pytest.raises(ValueError):
            canonical_methods([], DESK)


class TestRunReplications:
    DGP = DgpConfig(N=40, T=6, seed=314)

    def test_summary_matches_raw_replications(self):
        entries = collect_replications(self.DGP, ["naive"], DESK, 10)
        summary = run_replications(self.DGP, ["naive"], DESK, 10)["naive"]
        vals = np.array([e["naive"]["mu2"] for e in entries])
        assert summary.bias == pytest.approx(vals.mean() - 1.0, abs=1e-12)
        assert summary.std == pytest.approx(vals.std(ddof=0), abs=1e-12)
        rej = np.mean([abs((e["naive"]["mu2"] - 1.0) / e["naive"]["se2"])
                       > Z_CRIT for e in entries])
        assert summary.rej_prob == pytest.approx(rej, abs=1e-12)
        assert summary.n_reps == 10 and summary.n_fail == 0

    def test_rmse_decomposition(self):
        summary = run_replications(self.DGP, ["naive"], DESK, 12)["naive"]
        assert summary.rmse ** 2 == pytest.approx(
            summary.bias ** 2 + summary.std ** 2, abs=1e-10)

    def test_single_replication_degenerate_spread(self):
        summary = run_replications(self.DGP, ["naive"], DESK, 1)["naive"]
        assert summary.std == 0.0
        assert summary.rmse == pytest.approx(abs(summary.bias), abs=1e-15)

    def test_null_value_shifts_bias_only(self):
        at_one = run_replications(self.DGP, ["naive"], DESK, 8)["naive"]
        at_zero = run_replications(self.DGP, ["naive"], DESK, 8,
                                   null_value=0.0)["naive"]
        assert at_zero.bias == pytest.approx(at_one.bias + 1.0, abs=1e-12)
        assert at_zero.std == at_one.std

    def test_design_echo(self):
        dgp = DgpConfig(N=30, T=7, c=2.5, seed=9)
        summary = run_replications(dgp, ["naive"], DESK, 2)["naive"]
        assert (summary.c, summary.N, summary.T) == (2.5, 30, 7)


class TestWorkerInvariance:
    def test_thread_count_does_not_change_results(self):
        dgp = DgpConfig(N=40, T=6, seed=271)
        serial = run_replications(dgp, ["naive", "cgk"], DESK, 4, threads=1,
                                  n_boot=50)
        pooled = run_replications(dgp, ["naive", "cgk"], DESK, 4, threads=2,
                                  n_boot=50)
        assert serial == pooled  # frozen dataclasses: field-exact equality


@pytest.fixture(scope="module")
def rows():
    # long panel so the plug-in attenuation is negligible and the size
    # point sits near the nominal level
    dgp = DgpConfig(N=60, T=40, seed=1618)
    return power_curve(dgp, ["naive"], DESK, 60, [1.0, 1.5, 2.5])


class TestPowerCurve:
    def test_row_layout(self, rows):
        assert len(rows) == 3
        assert [r["null_value"] for r in rows] == [1.0, 1.5, 2.5]
        assert all(r["method"] == "naive" for r in rows)
        assert all(0.0 <= r["rejection"] <= 1.0 for r in rows)

    def test_size_near_nominal_and_power_increasing(self, rows):
        assert rows[0]["rejection"] <= 0.15
        assert rows[0]["rejection"] <= rows[1]["rejection"] <= rows[2]["rejection"]
        assert rows[2]["rejection"] >= 0.9

    def test_method_major_ordering(self):
        dgp = DgpConfig(N=40, T=6, seed=55)
        rows = power_curve(dgp, ["naive", "cgk"], DESK, 3, [0.5, 1.0],
                           n_boot=30)
        assert [(r["method"], r["null_value"]) for r in rows] == [
            ("naive", 0.5), ("naive", 1.0), ("cgk", 0.5), ("cgk", 1.0)]


class TestCsvText:
    SUMMARY = SimSummary(method="naive", bias=-0.0625, std=0.125,
                         rmse=math.sqrt(0.0625 ** 2 + 0.125 ** 2),
                         rej_prob=0.3, n_reps=16, n_fail=1, c=5.0, N=100,
                         T=12)

    def test_summary_layout_and_roundtrip(self):
        text = summary_csv_text([self.SUMMARY])
        lines = text.splitlines()
        assert lines[0] == "method,c,N,T,bias,std,rmse,rej_prob,n_fail"
        fields = lines[1].split(",")
        assert fields[0] == "naive"
        assert float(fields[1]) == 5.0
        assert fields[2] == "100" and fields[3] == "12"
        # repr round-trip: parsing the text recovers the exact floats
        assert float(fields[4]) == self.SUMMARY.bias
        assert float(fields[6]) == self.SUMMARY.rmse
        assert fields[8] == "1"
        assert text.endswith("\n")

    def test_config_echo_is_json(self):
        echo = {"N": 100, "methods": ["naive"], "seed": 0}
        text = summary_csv_text([self.SUMMARY], config_echo=echo)
        first = text.splitlines()[0]
        assert first.startswith("# config: ")
        assert json.loads(first[len("# config: "):]) == echo

    def test_dict_and_list_inputs_agree(self):
        as_list = summary_csv_text([self.SUMMARY])
        as_dict = summary_csv_text({"naive": self.SUMMARY})
        assert as_list == as_dict

    def test_power_layout(self):
        rows = [{"method": "cgk", "null_value": 0.5, "rejection": 0.12},
                {"method": "cgk", "null_value": 1.0, "rejection": 0.05}]
        text = power_csv_text(rows, config_echo={"R": 10})
        lines = text.splitlines()
        assert lines[0] == "# config: " + json.dumps({"R": 10})
        assert lines[1] == "method,null_value,rejection"
        assert lines[2] == "cgk,0.5,0.12"

    def test_file_writers_match_text(self, tmp_path):
        spath = tmp_path / "summary.csv"
        ppath = tmp_path / "power.csv"
        rows = [{"method": "naive", "null_value": 1.0, "rejection": 0.0}]
        write_summary_csv(spath, [self.SUMMARY], config_echo={"a": 1})
        write_power_csv(ppath, rows)
        assert spath.read_text() == summary_csv_text([self.SUMMARY],
                                                     config_echo={"a": 1})
        assert ppath.read_text() == power_csv_text(rows)
