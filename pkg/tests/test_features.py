"""Band variance against ideal band-pass oracles; differential entropy closed forms."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from ddalign.errors import ValidationError
from ddalign.features import (
    DEFAULT_BANDS,
    BandSpec,
    RawWindow,
    band_variance,
    build_feature_vector,
    differential_entropy,
    validate_bands,
)

ALPHA = BandSpec("alpha", 8.0, 14.0)
GAMMA = BandSpec("gamma", 31.0, 50.0)


def sine_window(freq_hz, fs, seconds, amplitude=1.0, n_channels=1):
    t = np.arange(int(fs * seconds)) / fs
    x = amplitude * np.sin(2 * np.pi * freq_hz * t)
    return RawWindow(np.tile(x, (n_channels, 1)), fs)


class TestBandVariance:
    def test_dc_signal_has_no_band_energy(self):
        win = RawWindow(np.full((1, 800), 3.7), fs=200.0)
        for band in DEFAULT_BANDS:
            assert band_variance(win, band, 0) <= 1e-9

    def test_in_band_sinusoid_recovers_half_amplitude_squared(self):
        # time-domain oracle: ideal band-pass of a unit 10 Hz sinusoid keeps
        # the whole signal, whose variance is A^2/2 = 0.5
        win = sine_window(10.0, fs=200.0, seconds=4.0)
        assert band_variance(win, ALPHA, 0) == pytest.approx(0.5, rel=0.05)

    def test_off_bin_sinusoid_still_captured(self):
        win = sine_window(10.4, fs=200.0, seconds=4.0)
        assert band_variance(win, ALPHA, 0) == pytest.approx(0.5, rel=0.05)

    def test_out_of_band_leakage_small(self):
        win = sine_window(10.0, fs=200.0, seconds=4.0)
        assert band_variance(win, GAMMA, 0) <= 0.01

    def test_white_noise_band_shares_sum_to_total(self):
        # flat spectrum: band variance proportional to band width
        rng = np.random.default_rng(0)
        win = RawWindow(rng.normal(size=(1, 200 * 60)), fs=200.0)
        full = band_variance(win, BandSpec("full", 1.0, 100.0), 0)
        alpha = band_variance(win, ALPHA, 0)
        assert alpha / full == pytest.approx(6.0 / 99.0, rel=0.15)

    def test_band_above_nyquist_rejected(self):
        win = sine_window(10.0, fs=100.0, seconds=2.0)
        with pytest.raises(ValidationError):
            band_variance(win, BandSpec("gamma", 31.0, 60.0), 0)

    def test_bad_channel_rejected(self):
        win = sine_window(10.0, fs=200.0, seconds=2.0)
        with pytest.raises(ValidationError):
            band_variance(win, ALPHA, 5)

    def test_amplitude_scaling_squares_variance(self):
        win1 = sine_window(10.0, fs=200.0, seconds=4.0, amplitude=1.0)
        win3 = sine_window(10.0, fs=200.0, seconds=4.0, amplitude=3.0)
        v1 = band_variance(win1, ALPHA, 0)
        v3 = band_variance(win3, ALPHA, 0)
        assert v3 / v1 == pytest.approx(9.0, rel=1e-10)


class TestDifferentialEntropy:
    def test_entropy_zero_point(self):
        assert differential_entropy(1.0 / (2 * math.pi * math.e)) == pytest.approx(0.0, abs=1e-15)

    def test_unit_variance(self):
        assert differential_entropy(1.0) == pytest.approx(1.41894, abs=1e-5)

    def test_closed_form_value_one(self):
        assert differential_entropy(math.e**2 / (2 * math.pi * math.e)) == pytest.approx(1.0)

    def test_monotone_and_doubling_adds_half_ln2(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = float(rng.uniform(1e-6, 1e3))
            assert differential_entropy(2 * v) - differential_entropy(v) == pytest.approx(
                0.5 * math.log(2), rel=1e-12
            )
            assert differential_entropy(2 * v) > differential_entropy(v)

    def test_nonpositive_variance_rejected(self):
        for bad in (0.0, -1.0, math.nan):
            with pytest.raises(ValidationError):
                differential_entropy(bad)


class TestBuildFeatureVector:
    def test_62_channels_5_bands_gives_310(self):
        rng = np.random.default_rng(2)
        win = RawWindow(rng.normal(size=(62, 400)), fs=200.0)
        assert len(build_feature_vector(win, DEFAULT_BANDS)) == 310

    def test_32_channels_5_bands_gives_160(self):
        rng = np.random.default_rng(3)
        win = RawWindow(rng.normal(size=(32, 256)), fs=128.0)
        assert len(build_feature_vector(win, DEFAULT_BANDS)) == 160

    def test_single_channel_matches_direct_formula(self):
        rng = np.random.default_rng(4)
        win = RawWindow(rng.normal(size=(1, 2000)), fs=200.0)
        band = BandSpec("alpha", 8.0, 14.0)
        fv = build_feature_vector(win, [band])
        expected = 0.5 * math.log(2 * math.pi * math.e * band_variance(win, band, 0))
        assert fv.values[0] == pytest.approx(expected, abs=1e-12)

    def test_channel_major_layout_and_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(4, 600))
        win = RawWindow(data, fs=200.0)
        fv = build_feature_vector(win, DEFAULT_BANDS)
        perm = [2, 0, 3, 1]
        fv_perm = build_feature_vector(RawWindow(data[perm], fs=200.0), DEFAULT_BANDS)
        blocks = fv.values.reshape(4, 5)
        npt.assert_allclose(fv_perm.values.reshape(4, 5), blocks[perm], rtol=1e-12)

    def test_amplitude_scaling_shifts_every_entry_by_ln_c(self):
        rng = np.random.default_rng(6)
        data = rng.normal(size=(3, 800))
        base = build_feature_vector(RawWindow(data, fs=200.0), DEFAULT_BANDS)
        scaled = build_feature_vector(RawWindow(2.5 * data, fs=200.0), DEFAULT_BANDS)
        npt.assert_allclose(scaled.values - base.values, math.log(2.5), rtol=1e-9)

    def test_silent_channel_is_floored_and_flagged(self):
        data = np.zeros((2, 400))
        data[1] = np.random.default_rng(7).normal(size=400)
        fv = build_feature_vector(RawWindow(data, fs=200.0), DEFAULT_BANDS)
        assert all(ch == 0 for ch, _ in fv.floored)
        assert len(fv.floored) == 5
        assert np.isfinite(fv.values).all()

    def test_disjoint_window_estimates_agree(self):
        # stationary noise: DE over disjoint long windows fluctuates mildly
        rng = np.random.default_rng(8)
        fs = 200.0
        estimates = []
        for _ in range(4):
            win = RawWindow(rng.normal(size=(1, int(fs * 20))), fs=fs)
            estimates.append(build_feature_vector(win, [ALPHA]).values[0])
        assert np.ptp(estimates) < 0.15

    def test_estimate_spread_shrinks_with_window_length(self):
        rng = np.random.default_rng(9)
        fs = 200.0

        def spread(seconds, repeats=8):
            vals = [
                build_feature_vector(
                    RawWindow(rng.normal(size=(1, int(fs * seconds))), fs=fs), [ALPHA]
                ).values[0]
                for _ in range(repeats)
            ]
            return np.std(vals)

        assert spread(40) < spread(5)


class TestValidation:
    def test_overlapping_bands_rejected(self):
        with pytest.raises(ValidationError):
            validate_bands([BandSpec("a", 1.0, 10.0), BandSpec("b", 8.0, 20.0)], fs=200.0)

    def test_window_invariants(self):
        with pytest.raises(ValidationError):
            RawWindow(np.ones((1, 50)), fs=100.0)  # shorter than 1 s
        with pytest.raises(ValidationError):
            RawWindow(np.full((1, 200), np.inf), fs=100.0)
        with pytest.raises(ValidationError):
            RawWindow(np.ones((1, 200)), fs=-1.0)

    def test_band_edge_order_enforced(self):
        with pytest.raises(ValidationError):
            BandSpec("bad", 10.0, 5.0)
