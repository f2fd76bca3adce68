import math
import warnings

import numpy as np
import pytest

from quantest.bounds import crb, fisher_pilot, fisher_unquantized
from quantest.errors import InvalidScenario, SingularFisher, SingularFisherWarning
from quantest.gnss import (
    C0,
    CODE_LENGTH,
    GnssScenario,
    Path,
    chips_to_meters,
    multipath_array_scenario,
    gen_ca_code,
    gnss_crb_report,
    grid_init,
    sample_code,
    simulate,
    single_antenna_scenario,
    steering_vector,
)
from quantest.models import GnssModel, stack_complex
from quantest.quantizer import optimize_quantizer

# G2 delays (chips) for PRN 1..32 from the GPS interface specification.
G2_DELAY = (
    5, 6, 7, 8, 17, 18, 139, 140, 141, 251, 252, 254, 255, 256, 257, 258,
    469, 470, 471, 472, 473, 474, 509, 512, 513, 514, 515, 516, 859, 860, 861, 862,
)
# First 10 chips in octal (logic levels), PRN 1..6.
FIRST10_OCTAL = (0o1440, 0o1620, 0o1710, 0o1744, 0o1133, 0o1455)


def _lfsr(taps):
    reg = [1] * 10
    out = []
    for _ in range(CODE_LENGTH):
        out.append(reg[9])
        fb = 0
        for t in taps:
            fb ^= reg[t - 1]
        reg = [fb] + reg[:9]
    return np.array(out)


G1 = _lfsr((3, 10))
G2 = _lfsr((2, 3, 6, 8, 9, 10))


def _oracle_code(prn):
    bits = G1 ^ np.roll(G2, G2_DELAY[prn - 1])
    return 1.0 - 2.0 * bits


class TestCaCode:
    """C/A Gold codes against the delayed-G2 construction."""

    @pytest.mark.parametrize("prn", range(1, 33))
    def test_matches_delay_construction(self, prn):
        np.testing.assert_array_equal(gen_ca_code(prn), _oracle_code(prn))

    @pytest.mark.parametrize("prn,octal", list(zip(range(1, 7), FIRST10_OCTAL)))
    def test_first_chips(self, prn, octal):
        bits = (1 - gen_ca_code(prn)[:10]) / 2
        assert int("".join(str(int(b)) for b in bits), 2) == octal

    def test_balance_and_correlation(self):
        codes = np.array([gen_ca_code(p) for p in range(1, 33)])
        assert np.all(np.abs(codes.sum(axis=1)) <= 65)
        c1 = codes[0]
        auto = np.array([c1 @ np.roll(c1, k) for k in range(CODE_LENGTH)])
        assert auto[0] == CODE_LENGTH
        assert set(auto[1:].astype(int)) <= {-65, -1, 63}
        cross = np.array([c1 @ np.roll(codes[1], k) for k in range(CODE_LENGTH)])
        assert set(cross.astype(int)) <= {-65, -1, 63}

    @pytest.mark.parametrize("prn", [0, 33, 2.0])
    def test_invalid_prn(self, prn):
        with pytest.raises(InvalidScenario):
            gen_ca_code(prn)


class TestArrayAndSampling:
    def test_steering(self):
        np.testing.assert_allclose(steering_vector(0.0, 3), np.ones(3))
        np.testing.assert_allclose(steering_vector(30.0, 3), [1, 1j, -1], atol=1e-15)
        np.testing.assert_allclose(steering_vector(-90.0, 2), [1, -1], atol=1e-15)

    def test_steering_out_of_range(self):
        with pytest.raises(InvalidScenario):
            steering_vector(91.0, 4)

    def test_integer_shift(self):
        sc = GnssScenario(paths=(Path(1.0, 0.0),), sample_rate=1.023e6, chip_duration=1 / 1.023e6)
        code = gen_ca_code(1)
        np.testing.assert_array_equal(sample_code(code, 0.0, sc), code)
        np.testing.assert_array_equal(sample_code(code, 3.0, sc), np.roll(code, 3))

    def test_fractional_shift_interpolates(self):
        sc = GnssScenario(paths=(Path(1.0, 0.0),), sample_rate=1.023e6, chip_duration=1 / 1.023e6)
        code = gen_ca_code(1)
        half = sample_code(code, 0.5, sc)
        np.testing.assert_allclose(half, 0.5 * (code + np.roll(code, 1)))

    def test_sample_count(self):
        sc = single_antenna_scenario()
        assert sc.n_samples == 2046
        assert sc.samples_per_chip == pytest.approx(2.0, rel=1e-4)
        assert GnssScenario(paths=sc.paths, periods=3).n_samples == 3 * 2046

    def test_snr_sets_sigma(self):
        sc = single_antenna_scenario(snr_db=-20.0)
        assert sc.sigma == pytest.approx(math.sqrt(100 / 2))

    def test_from_dict_with_seconds_and_smr(self):
        sc = GnssScenario.from_dict(
            {"paths": [{"gamma": [1, 0], "tau_s": 977.52e-9}, {"gamma": 1.0, "tau": 1.3, "phi": 20}], "smr_db": 6.0, "antennas": 2}
        )
        assert sc.paths[0].tau == pytest.approx(1.0)
        assert abs(sc.paths[1].gamma) == pytest.approx(10 ** (-6 / 20))

    def test_bad_scenario(self):
        with pytest.raises(InvalidScenario):
            GnssScenario.from_dict({"paths": [{"tau": 0.1}], "bogus": 1})
        with pytest.raises(InvalidScenario):
            GnssScenario(paths=(Path(1.0, 0.1, 0.0, 95.0),))


class TestCrbReport:
    """GNSS bounds in physical units."""

    def test_two_path_array_finite(self):
        q = optimize_quantizer(3, multipath_array_scenario().sigma)[0]
        rep = gnss_crb_report(multipath_array_scenario(), q)
        assert np.all(np.isfinite(rep.sqrt_crb)) and np.all(rep.sqrt_crb > 0)
        assert rep.units[rep.names.index("tau1")] == "m"
        assert rep.units[rep.names.index("phi2")] == "deg"
        assert set(rep.to_dict()) == set(rep.names)

    def test_indistinguishable_paths(self):
        sc = GnssScenario(paths=(Path(1.0, 0.1, 0.0, 10.0), Path(0.5, 0.1, 0.0, 10.0)), antennas=4)
        q = optimize_quantizer(2, sc.sigma)[0]
        with pytest.raises(SingularFisher):
            gnss_crb_report(sc, q)

    def test_single_antenna_has_no_azimuth(self):
        q = optimize_quantizer(2, single_antenna_scenario().sigma)[0]
        rep = gnss_crb_report(single_antenna_scenario(), q)
        assert rep.names == ["re_gamma1", "im_gamma1", "tau1", "nu1"]

    def test_periods_add_information(self):
        """Fisher information grows linearly with the number of code periods.

        The chip duration is set so that every period samples the code at
        the same phases.
        """
        sc1 = GnssScenario(paths=(Path(1.0, 0.1),), chip_duration=1 / 1.023e6, snr_db=-20.0)
        sc3 = GnssScenario(paths=sc1.paths, chip_duration=1 / 1.023e6, periods=3, snr_db=-20.0)
        q = optimize_quantizer(2, sc1.sigma)[0]
        J1 = fisher_pilot(GnssModel(sc1, ["tau", "gamma"]), q, GnssModel(sc1, ["tau", "gamma"]).theta_true, sc1.sigma).J
        m3 = GnssModel(sc3, ["tau", "gamma"])
        J3 = fisher_pilot(m3, q, m3.theta_true, sc3.sigma).J
        np.testing.assert_allclose(J3, 3 * J1, rtol=1e-6, atol=1e-6 * np.abs(J1).max())

    def test_rotation_invariance_unquantized(self):
        """A common phase rotation of the amplitudes leaves the delay bound unchanged."""
        base = multipath_array_scenario()
        rot = np.exp(1j * 0.7)
        sc = GnssScenario(
            paths=tuple(Path(p.gamma * rot, p.tau, p.nu, p.phi) for p in base.paths),
            antennas=base.antennas,
            snr_db=base.snr_db,
        )
        vals = []
        for s in (base, sc):
            m = GnssModel(s)
            vals.append(crb(fisher_unquantized(m, m.theta_true, s.sigma)).bounds[m.free_names.index("tau1")])
        assert vals[1] == pytest.approx(vals[0], rel=1e-6)

    def test_chips_to_meters(self):
        sc = single_antenna_scenario()
        assert float(chips_to_meters(sc, 1.0)) == pytest.approx(977.52e-9 * C0)


class TestGridInit:
    def test_high_snr_recovers_paths(self):
        sc = multipath_array_scenario(snr_db=5.0)
        m = GnssModel(sc)
        y = simulate(sc, np.random.default_rng(0))
        full = grid_init(m, y)
        L = sc.n_paths
        np.testing.assert_allclose(full[2 * L : 3 * L], [0.1, 0.4], atol=0.02)
        np.testing.assert_allclose(full[4 * L :], [-30.0, 62.0], atol=0.3)
        np.testing.assert_allclose(full[0] + 1j * full[L], 1.0, atol=0.05)
