import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantest.errors import InvalidQuantizer, NonFinite
from quantest.quantizer import (
    Quantizer,
    make_custom,
    make_midriser,
    optimize_quantizer,
    quantize,
    rho_q,
    sign_quantizer,
)

# Frozen from an mpmath (30 digit) golden-section search over the step size.
UNIFORM_OPT = {
    2: (0.981598821568, 0.88251815217067),
    3: (0.564581497648, 0.96418911187087),
    4: (0.319907674573, 0.98920816443805),
}
# Frozen from Nelder-Mead over mpmath rho with thresholds {0, +-t1, +-t2, +-t3}.
FREE3 = ([0.50054974, 1.0499573, 1.74792753], 0.9654522392114963)


class TestStructure:
    """Construction, validation and cell lookup."""

    def test_midriser_levels(self):
        q = make_midriser(2, 1.0)
        assert q.n_cells == 4
        assert q.thresholds.tolist() == [-1.0, 0.0, 1.0]
        assert q.representatives.tolist() == [-1.5, -0.5, 0.5, 1.5]

    def test_sign_quantizer(self):
        q = sign_quantizer()
        assert q.thresholds.tolist() == [0.0]
        assert q.representatives.tolist() == [-1.0, 1.0]

    @pytest.mark.parametrize(
        "t,reps",
        [([1.0, 0.5], [0, 1, 2]), ([0.0, 0.0], [0, 1, 2]), ([0.0], [1.0]), ([0.0, np.inf], [0, 1, 2]), ([0.0], [0, 1, 2])],
    )
    def test_invalid(self, t, reps):
        with pytest.raises(InvalidQuantizer):
            Quantizer(t, reps)

    @pytest.mark.parametrize("bits,delta", [(0, 1.0), (9, 1.0), (2, 0.0), (2, -1.0), (1.5, 1.0)])
    def test_invalid_midriser(self, bits, delta):
        with pytest.raises(InvalidQuantizer):
            make_midriser(bits, delta)

    def test_lower_inclusive(self):
        q = make_midriser(2, 1.0)
        idx = q.index([-1.0, -1e-300, 0.0, 0.999, 1.0, 50.0, -50.0])
        assert idx.tolist() == [1, 1, 2, 2, 3, 3, 0]
        lo, up = q.cell(2)
        assert (lo, up) == (0.0, 1.0)

    def test_nan_rejected(self):
        with pytest.raises(NonFinite):
            sign_quantizer().index([0.0, np.nan])

    def test_quantize_triplet(self):
        i, rep, cell = quantize(make_midriser(1, 2.0), -0.3)
        assert (i, rep, tuple(cell)) == (0, -1.0, (-np.inf, 0.0))

    def test_json_round_trip(self):
        q = make_midriser(3, 0.5)
        back = Quantizer.from_json(q.to_json())
        np.testing.assert_array_equal(back.thresholds, q.thresholds)
        np.testing.assert_array_equal(back.representatives, q.representatives)
        assert back.bits == 3 and back.delta == 0.5

    def test_missing_field(self):
        with pytest.raises(InvalidQuantizer):
            Quantizer.from_dict({"thresholds": [0.0]})

    def test_custom_default_representatives(self):
        q = make_custom([-1.0, 0.0, 1.0])
        assert q.representatives.tolist() == [-1.5, -0.5, 0.5, 1.5]

    def test_immutable(self):
        q = make_midriser(2, 1.0)
        with pytest.raises(ValueError):
            q.thresholds[0] = 5.0


class TestRho:
    """Low-SNR Fisher loss factor."""

    def test_one_bit(self):
        assert rho_q(sign_quantizer()) == pytest.approx(2 / math.pi, rel=1e-14)

    def test_one_bit_offset_threshold(self):
        # single threshold at t: phi(t)^2 / (Phi(t) Phi(-t))
        from scipy.stats import norm

        t = 0.7
        ref = norm.pdf(t) ** 2 / (norm.cdf(t) * norm.sf(t))
        assert rho_q(Quantizer([t], [0, 1])) == pytest.approx(ref, rel=1e-13)

    def test_sigma_normalizes(self):
        q = make_midriser(3, 0.5)
        assert rho_q(q.scaled(2.0), 2.0) == pytest.approx(rho_q(q), rel=1e-14)

    @pytest.mark.parametrize("bits", [2, 3, 4])
    def test_uniform_optimum(self, bits):
        d_ref, rho_ref = UNIFORM_OPT[bits]
        q, rho = optimize_quantizer(bits)
        assert q.delta == pytest.approx(d_ref, abs=1e-6)
        assert rho == pytest.approx(rho_ref, abs=1e-9)
        assert rho_q(q) == pytest.approx(rho, abs=1e-12)

    def test_uniform_optimum_scales(self):
        q, rho = optimize_quantizer(2, sigma=3.0)
        assert q.delta == pytest.approx(3.0 * UNIFORM_OPT[2][0], abs=3e-6)
        assert rho_q(q, 3.0) == pytest.approx(rho, abs=1e-10)

    def test_free_two_bits_is_uniform(self):
        qf, rf = optimize_quantizer(2, mode="free")
        qu, ru = optimize_quantizer(2)
        np.testing.assert_allclose(qf.thresholds, qu.thresholds, atol=1e-5)
        assert rf == pytest.approx(ru, abs=1e-10)

    def test_free_three_bits(self):
        q, rho = optimize_quantizer(3, mode="free")
        pos, ref = FREE3
        np.testing.assert_allclose(q.thresholds[4:], pos, atol=1e-5)
        np.testing.assert_allclose(q.thresholds[:3], -np.array(pos[::-1]), atol=1e-5)
        assert q.thresholds[3] == 0.0
        assert rho == pytest.approx(ref, abs=1e-9)
        assert rho > UNIFORM_OPT[3][1]

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            optimize_quantizer(2, mode="lloyd")

    @given(st.lists(st.floats(-6, 6), min_size=1, max_size=12, unique=True))
    def test_rho_in_unit_interval(self, t):
        t = sorted(t)
        if np.any(np.diff(t) < 1e-6):
            return
        rho = rho_q(make_custom(t))
        assert 0.0 < rho <= 1.0

    @given(st.lists(st.floats(-4, 4), min_size=1, max_size=8, unique=True), st.floats(-4, 4))
    def test_refinement_never_loses_information(self, t, extra):
        t = sorted(t)
        finer = sorted(set(t) | {extra})
        if np.any(np.diff(t) < 1e-6) or np.any(np.diff(finer) < 1e-6):
            return
        assert rho_q(make_custom(finer)) >= rho_q(make_custom(t)) - 1e-12

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=8, unique=True), st.floats(0.1, 10))
    def test_scale_invariance(self, t, c):
        t = sorted(t)
        if np.any(np.diff(t) < 1e-6):
            return
        q = make_custom(t)
        assert rho_q(q.scaled(c), c) == pytest.approx(rho_q(q), rel=1e-9)


class TestPartitionProperty:
    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=10, unique=True),
        st.lists(st.floats(-1e6, 1e6, allow_subnormal=False), min_size=1, max_size=30),
    )
    def test_every_sample_lands_in_its_cell(self, t, y):
        t = sorted(t)
        if np.any(np.diff(t) <= 0):
            return
        q = make_custom(t)
        idx = q.index(y)
        lo, up = q.cell(idx)
        y = np.asarray(y)
        assert np.all((lo <= y) & (y < up))
