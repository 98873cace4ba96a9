import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import prototype_response
from iedkit.preprocess import (
    EPILEPTIC,
    EmptyRecordingError,
    InvalidBandError,
    PreprocessConfig,
    RawRecording,
    SampleRateMismatchError,
    apply_filter,
    design_bandpass,
    fit_window,
    frequency_response,
    normalize_channels,
    preprocess_recording,
    standardize,
)


@pytest.fixture(scope="module")
def coeffs():
    return design_bandpass(250.0, 0.5, 49.0, 2)


class TestChannels:
    def test_thirty_is_identity(self):
        x = np.arange(60.0).reshape(30, 2)
        np.testing.assert_array_equal(normalize_channels(x), x)

    def test_recycles_first_rows(self):
        x = np.random.default_rng(0).normal(size=(24, 5))
        out = normalize_channels(x)
        assert out.shape == (30, 5)
        np.testing.assert_array_equal(out[24:], x[:6])
        np.testing.assert_array_equal(out[:24], x)

    def test_keeps_first_thirty(self):
        x = np.random.default_rng(0).normal(size=(33, 5))
        np.testing.assert_array_equal(normalize_channels(x), x[:30])

    def test_very_few_channels_wrap(self):
        x = np.arange(10.0).reshape(2, 5)
        out = normalize_channels(x, 5)
        np.testing.assert_array_equal(out, x[[0, 1, 0, 1, 0]])

    def test_empty(self):
        with pytest.raises(EmptyRecordingError):
            normalize_channels(np.zeros((0, 5)))


class TestWindow:
    def test_exact_length(self):
        x = np.ones((30, 7500))
        np.testing.assert_array_equal(fit_window(x), x)

    def test_pads_with_zeros(self):
        out = fit_window(np.ones((30, 5000)))
        assert out.shape == (30, 7500)
        assert np.all(out[:, 5000:] == 0.0)
        assert np.all(out[:, :5000] == 1.0)

    def test_crops_long_recordings(self):
        x = np.tile(np.arange(900_000.0), (2, 1))
        out = fit_window(x)
        np.testing.assert_array_equal(out, x[:, :7500])


class TestFilterDesign:
    def test_shape_and_stability(self, coeffs):
        assert coeffs.num_poles == 4
        assert coeffs.a[0] == 1.0
        assert coeffs.is_stable()
        assert len(coeffs.b) == len(coeffs.a) == 5

    def test_cutoffs_are_half_power(self, coeffs):
        db = 20 * np.log10(np.abs(frequency_response(coeffs, [0.5, 49.0])))
        np.testing.assert_allclose(db, -3.0103, atol=0.5)
        np.testing.assert_allclose(db, 20 * np.log10(np.sqrt(0.5)), atol=1e-9)

    def test_dc_blocked(self, coeffs):
        assert abs(frequency_response(coeffs, [0.0])[0]) == 0.0

    def test_sixty_hz_attenuated(self, coeffs):
        h60 = frequency_response(coeffs, [60.0])[0]
        assert 20 * np.log10(abs(h60)) < -3.0
        oracle = prototype_response([60.0])[0]
        assert abs(h60 - oracle) / abs(oracle) < 1e-9

    def test_matches_prototype_oracle_at_fifty_frequencies(self, coeffs):
        freqs = np.linspace(0.2, 124.0, 50)
        h = frequency_response(coeffs, freqs)
        oracle = prototype_response(freqs)
        rel = np.abs(h - oracle) / np.abs(oracle)
        assert rel.max() < 1e-9

    def test_zero_pole_form_agrees(self, coeffs):
        freqs = np.linspace(1.0, 120.0, 25)
        z = np.exp(1j * 2 * np.pi * freqs / coeffs.fs)
        zpk = coeffs.gain * np.prod(z[:, None] - coeffs.zeros, axis=1) / np.prod(
            z[:, None] - coeffs.poles, axis=1)
        np.testing.assert_allclose(zpk, frequency_response(coeffs, freqs), rtol=1e-9)

    @pytest.mark.parametrize("low,high", [(0.0, 49.0), (49.0, 0.5), (0.5, 125.0), (-1.0, 10.0)])
    def test_invalid_band(self, low, high):
        with pytest.raises(InvalidBandError):
            design_bandpass(250.0, low, high, 2)

    @settings(max_examples=30, deadline=None)
    @given(fs=st.floats(50.0, 1000.0), lo_frac=st.floats(0.01, 0.4),
           width=st.floats(0.05, 0.9), order=st.integers(1, 4))
    def test_property_half_power_and_stable(self, fs, lo_frac, width, order):
        low = lo_frac * fs / 2
        high = low + width * (fs / 2 - low)
        c = design_bandpass(fs, low, high, order)
        assert c.is_stable()
        assert c.num_poles == 2 * order
        z = np.exp(1j * 2 * np.pi * np.array([low, high]) / fs)
        zpk = c.gain * np.prod(z[:, None] - c.zeros, axis=1) / np.prod(z[:, None] - c.poles, axis=1)
        np.testing.assert_allclose(np.abs(zpk), np.sqrt(0.5), rtol=1e-9)
        # expanded polynomials lose a few digits on narrow high-order bands
        np.testing.assert_allclose(np.abs(frequency_response(c, [low, high])),
                                   np.sqrt(0.5), rtol=1e-4)


class TestApplyFilter:
    def test_zero_in_zero_out(self, coeffs):
        assert np.all(apply_filter(coeffs, np.zeros(1000)) == 0.0)

    def test_length_preserved(self, coeffs):
        assert apply_filter(coeffs, np.ones(17)).shape == (17,)

    def test_linearity(self, coeffs):
        x = np.random.default_rng(1).normal(size=2000)
        np.testing.assert_allclose(apply_filter(coeffs, 3.7 * x), 3.7 * apply_filter(coeffs, x),
                                   rtol=1e-12, atol=1e-12)

    def test_ten_hz_steady_state(self, coeffs):
        fs = 250.0
        t = np.arange(int(20 * fs)) / fs
        y = apply_filter(coeffs, np.sin(2 * np.pi * 10.0 * t))
        steady = y[int(2 * fs):]
        amplitude = np.sqrt(2 * np.mean(steady ** 2))
        expected = abs(prototype_response([10.0])[0])
        assert abs(amplitude - expected) / expected < 0.01

    def test_impulse_response_decays(self, coeffs):
        impulse = np.zeros(1_000_000)
        impulse[0] = 1.0
        h = apply_filter(coeffs, impulse)
        energy = np.sum(h ** 2)
        assert np.sum(h[-1000:] ** 2) < 1e-12 * energy

    def test_zero_phase_option_differs(self, coeffs):
        x = np.random.default_rng(2).normal(size=500)
        assert not np.allclose(apply_filter(coeffs, x), apply_filter(coeffs, x, zero_phase=True))


class TestStandardize:
    def test_hand_example(self):
        out = standardize(np.array([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(out[0], [-1.224744871391589, 0.0, 1.224744871391589])

    def test_constant_channel(self):
        assert np.all(standardize(np.full((1, 10), 5.0)) == 0.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e4), shift=st.floats(-1e3, 1e3))
    def test_property_moments(self, seed, scale, shift):
        x = shift + scale * np.random.default_rng(seed).normal(size=(3, 500))
        out = standardize(x)
        assert np.all(np.abs(out.mean(axis=1)) < 1e-9)
        assert np.all(np.abs(out.var(axis=1) - 1.0) < 1e-6)


def reference_pipeline(channels, coeffs):
    """The chain written out by hand: recycle, pad, filter, z-score."""
    c = channels.shape[0]
    rows = [channels[i % c] for i in range(30)]
    x = np.zeros((30, 7500))
    n = min(7500, channels.shape[1])
    for i, row in enumerate(rows):
        x[i, :n] = row[:n]
    from scipy.signal import lfilter
    y = lfilter(coeffs.b, coeffs.a, x, axis=1)
    return (y - y.mean(axis=1, keepdims=True)) / y.std(axis=1, keepdims=True)


class TestPipeline:
    def test_short_recording_with_few_channels(self, coeffs):
        rng = np.random.default_rng(3)
        raw = RawRecording("p1", EPILEPTIC, 250.0, rng.normal(size=(24, 5000)))
        out = preprocess_recording(raw)
        assert out.window.shape == (30, 7500)
        np.testing.assert_allclose(out.window, reference_pipeline(raw.channels, coeffs),
                                   rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(out.window[24:], out.window[:6])
        assert np.any(out.window[:, 5000:] != 0.0)

    def test_long_recording_with_extra_channels(self):
        raw = RawRecording("p1", EPILEPTIC, 250.0,
                           np.random.default_rng(4).normal(size=(33, 250 * 120)))
        assert preprocess_recording(raw).window.shape == (30, 7500)

    def test_rate_mismatch(self):
        raw = RawRecording("p1", EPILEPTIC, 250.5, np.ones((30, 1000)))
        with pytest.raises(SampleRateMismatchError):
            preprocess_recording(raw)

    def test_resampling_when_enabled(self):
        raw = RawRecording("p1", EPILEPTIC, 500.0,
                           np.random.default_rng(5).normal(size=(30, 500 * 40)))
        out = preprocess_recording(raw, PreprocessConfig(resample=True))
        assert out.window.shape == (30, 7500)

    def test_deterministic(self):
        raw = RawRecording("p1", EPILEPTIC, 250.0,
                           np.random.default_rng(6).normal(size=(30, 8000)))
        assert preprocess_recording(raw).window.tobytes() == preprocess_recording(raw).window.tobytes()

    def test_filter_before_standardize(self, coeffs):
        raw = RawRecording("p1", EPILEPTIC, 250.0,
                           np.random.default_rng(7).normal(size=(30, 7500)) + 4.0)
        swapped = apply_filter(coeffs, standardize(raw.channels))
        assert not np.allclose(preprocess_recording(raw).window, swapped)
