import csv
import io
import json
import math

import numpy as np
import pytest

from quantest.errors import ConfigError
from quantest.gnss.signal import GnssScenario, Path
from quantest.harness import (
    CSV_FIELDS,
    SCENARIOS,
    SweepConfig,
    orthogonal_pilots,
    rows_to_csv,
    rows_to_json,
    run_sweep,
    run_trial,
    scenario_crb,
    worker_count,
)


def small_gnss():
    return GnssScenario(paths=(Path(1.0, 0.3),), antennas=1, snr_db=0.0)


SMOKE = {
    "siso1tap": dict(bits=1, snr=3.0),
    "siso2tap": dict(bits=2, snr=3.0),
    "blind": dict(bits=3, snr=3.0),
    "mimo2x2": dict(bits=1, snr=3.0),
    "mimoNxN": dict(bits=2, snr=-10.0, n_pilots=64, n_antennas=2),
    "gnss": dict(bits=2, gnss=small_gnss()),
}


class TestConfig:
    """Sweep configuration validation."""

    @pytest.mark.parametrize(
        "kw,field",
        [
            (dict(scenario="siso3tap"), "scenario"),
            (dict(axis="sigma"), "axis"),
            (dict(axis_values=[]), "axis_values"),
            (dict(trials=0), "trials"),
            (dict(estimator="lms"), "estimator"),
            (dict(bits=9), "bit count"),
            (dict(bits="two"), "bit count"),
            (dict(scenario="blind", bits=1), "bits"),
            (dict(scenario="blind", bits="inf"), "bits"),
            (dict(scenario="siso1tap", estimator="closed_form", bits=3), "estimator"),
            (dict(scenario="mimoNxN", estimator="closed_form"), "estimator"),
            (dict(axis="bits", axis_values=[1, 2]), "snr"),
        ],
    )
    def test_rejects(self, kw, field):
        base = dict(scenario="siso1tap", axis="snr", axis_values=[1.0])
        base.update(kw)
        with pytest.raises(ConfigError, match=field):
            SweepConfig(**base)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="colour"):
            SweepConfig.from_dict({"scenario": "siso1tap", "axis": "snr", "axis_values": [1], "colour": 1})

    def test_missing_field(self):
        with pytest.raises(ConfigError, match="axis"):
            SweepConfig.from_dict({"scenario": "siso1tap"})

    def test_bits_parsing(self):
        cfg = SweepConfig("mimoNxN", "bits", [1, "2", 3.0, "inf"], snr=-10)
        assert cfg.axis_values == (1, 2, 3, math.inf)

    def test_gnss_from_dict(self):
        cfg = SweepConfig.from_dict(
            {"scenario": "gnss", "axis": "bits", "axis_values": [2], "gnss": {"paths": [{"tau": 0.2}], "antennas": 1}}
        )
        assert cfg.gnss.paths[0].tau == 0.2

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("QUANTEST_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("QUANTEST_THREADS", "many")
        with pytest.raises(ConfigError):
            worker_count()


class TestTrials:
    """Per-trial reproducibility and error accounting."""

    def test_same_seed_same_result(self):
        cfg = SweepConfig("siso2tap", "snr", [3.0], bits=2, seed=9)
        a, b = run_trial(cfg, 3.0, 17), run_trial(cfg, 3.0, 17)
        assert a.sq_error == b.sq_error
        np.testing.assert_array_equal(a.estimate, b.estimate)
        assert run_trial(cfg, 3.0, 18).sq_error != a.sq_error

    def test_noiseless_limit(self):
        cfg = SweepConfig("mimo2x2", "snr", [120.0], bits="inf")
        assert run_trial(cfg, 120.0, 0).sq_error < 1e-12

    def test_noiseless_fine_quantizer(self):
        # the sweep scales quantizers with sigma, so this limit needs a fixed one
        from quantest.estimators import em_pilot
        from quantest.models import build_siso_model
        from quantest.quantizer import make_midriser

        rng = np.random.default_rng(0)
        x = rng.choice([-1.0, 1.0], 50)
        for sigma in (1e-2, 3e-3, 1e-3):
            q = make_midriser(8, sigma)  # step shrinks with the noise, range still covers h
            y = 0.0734 * x + sigma * rng.standard_normal(50)
            tr = em_pilot(build_siso_model(x), q, q.index(y), sigma)
            # about 16 times the unquantized variance sigma^2 / N
            assert (tr.theta_hat[0] - 0.0734) ** 2 < 16 * sigma**2 / 50

    def test_saturation_is_a_failure(self):
        cfg = SweepConfig("siso1tap", "snr", [40.0], bits=1, estimator="closed_form", n_pilots=20)
        res = run_trial(cfg, 40.0, 0)
        assert res.failure == "Saturated" and math.isnan(res.sq_error)
        row = run_sweep(SweepConfig("siso1tap", "snr", [40.0], bits=1, estimator="closed_form", n_pilots=20, trials=3), workers=1)[0]
        assert row.failures == 3 and math.isnan(row.mse)

    def test_orthogonal_pilots(self):
        P = orthogonal_pilots(4, 1000)
        np.testing.assert_array_equal(P @ P.T, 1000 * np.eye(4))
        assert set(np.unique(P)) == {-1.0, 1.0}


class TestSweep:
    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_single_trial_smoke(self, scenario):
        kw = SMOKE[scenario]
        value = kw.pop("snr", 0.0)
        cfg = SweepConfig(scenario, "snr", [value], trials=1, **kw)
        kw["snr"] = value
        (row,) = run_sweep(cfg, workers=1)
        assert row.trials == 1 and row.failures + (row.mse == row.mse) >= 1
        assert row.crb > 0

    def test_bitwise_identical_across_workers(self):
        cfg = SweepConfig("siso2tap", "snr", [1.0, 5.0], bits=2, trials=12, seed=4, snr_unit="linear")
        one = rows_to_csv(run_sweep(cfg, workers=1))
        two = rows_to_csv(run_sweep(cfg, workers=2))
        assert one == two

    def test_csv_format(self):
        cfg = SweepConfig("siso1tap", "bits", [1, "inf"], snr=2.0, trials=4, seed=1)
        text = rows_to_csv(run_sweep(cfg, workers=1))
        rows = list(csv.DictReader(io.StringIO(text)))
        assert tuple(rows[0]) == CSV_FIELDS
        assert [r["axis_value"] for r in rows] == ["1", "inf"]
        assert rows[0]["trials"] == "4" and rows[0]["seed"] == "1"
        # 9 significant digits
        assert len(rows[0]["mse"].replace(".", "").replace("-", "").split("e")[0].lstrip("0")) <= 9
        doc = json.loads(rows_to_json(run_sweep(cfg, workers=1)))
        assert "Philox" in doc["rng"] and doc["rows"][1]["bits"] == "inf"

    def test_crb_column(self):
        from scipy.stats import norm

        # 0 dB: h = sigma = 1, J = N phi(1)^2 / (Phi(1) Phi(-1))
        cfg = SweepConfig("siso1tap", "snr", [0.0], bits=1, n_pilots=200)
        ref = 1.0 / (200 * norm.pdf(1.0) ** 2 / (norm.cdf(1.0) * norm.sf(1.0)))
        assert scenario_crb(cfg, 0.0)["total"] == pytest.approx(ref, rel=1e-10)
        unq = SweepConfig("mimo2x2", "snr", [0.0], bits="inf")
        assert scenario_crb(unq, 0.0)["total"] > 0
        assert not scenario_crb(SweepConfig("blind", "snr", [3.0], bits=3), 3.0)["singular"]

    def test_blind_two_bits_not_identifiable(self):
        """Four symmetric cells leave one free probability for two unknowns."""
        res = scenario_crb(SweepConfig("blind", "snr", [3.0], bits=2), 3.0)
        assert res["singular"] and math.isinf(res["total"])

    def test_mimo_bits_ordering(self):
        cfg = SweepConfig("mimoNxN", "bits", [1, 2, 3, "inf"], snr=-10.0, trials=60, seed=2, n_pilots=256)
        mse = [r.mse for r in run_sweep(cfg, workers=1)]
        assert mse[0] > mse[1] > mse[3]
        assert mse[2] / mse[3] < 1.1
