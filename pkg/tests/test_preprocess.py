import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from augunet1d.preprocess import (
    InputTooShort,
    ResampleSpec,
    epochize,
    minmax_scale,
    minmax_scale_array,
    resample,
    resample_array,
)
from augunet1d.signal_io import Recording


def dft_peak(x, rate):
    """Brute-force DFT magnitude (no FFT) evaluated on the rfft grid; returns (peak_hz, amplitude)."""
    n = x.size
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    mag = np.abs(basis @ x) / (n / 2)
    i = int(np.argmax(mag[1:])) + 1
    return i * rate / n, mag[i]


class TestResample:
    def test_dc_preserved(self):
        rec = Recording(np.ones(10_000), 1000.0)
        out = resample(rec, ResampleSpec(1000, 100))
        half = ResampleSpec(1000, 100).kernel_half_width_zero_crossings
        assert len(out) == 1000 and out.sample_rate_hz == 100
        np.testing.assert_allclose(out.samples[half:-half], 1.0, atol=1e-6)

    def test_identity_rate(self):
        x = np.random.default_rng(0).normal(size=777)
        out = resample(Recording(x, 100.0), ResampleSpec(100, 100))
        np.testing.assert_array_equal(out.samples, x)

    def test_sine_peak_and_gain(self):
        rate_in, rate_out = 400.0, 100.0
        t = np.arange(int(60 * rate_in)) / rate_in
        out = resample_array(np.sin(2 * np.pi * 5 * t), ResampleSpec(rate_in, rate_out))
        assert out.size == 6000
        # window an exact number of cycles away from the edges for the DFT oracle
        seg = out[1000:5000]
        peak_hz, amp = dft_peak(seg, rate_out)
        assert abs(peak_hz - 5.0) <= rate_out / seg.size
        assert abs(amp - 1.0) <= 0.01

    @pytest.mark.parametrize("src,dst", [(400, 100), (1000, 100), (256, 100), (100, 250), (512, 100)])
    def test_output_length(self, src, dst):
        n = 4321
        out = resample_array(np.zeros(n), ResampleSpec(src, dst))
        assert out.size == round(n * dst / src)

    def test_upsampling_tracks_sine(self):
        t = np.arange(3000) / 100.0
        out = resample_array(np.sin(2 * np.pi * 3 * t), ResampleSpec(100, 250))
        tt = np.arange(out.size) / 250.0
        np.testing.assert_allclose(out[200:-200], np.sin(2 * np.pi * 3 * tt[200:-200]), atol=1e-3)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=5000), rng.normal(size=5000)
        spec = ResampleSpec(400, 100)
        lhs = resample_array(2.5 * x - 0.7 * y, spec)
        rhs = 2.5 * resample_array(x, spec) - 0.7 * resample_array(y, spec)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))

    def test_band_limited_energy(self):
        rng = np.random.default_rng(7)
        rate_in = 400.0
        t = np.arange(int(120 * rate_in)) / rate_in
        freqs = rng.uniform(0.5, 40.0, size=12)
        x = sum(rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6)) for f in freqs)
        out = resample_array(x, ResampleSpec(rate_in, 100.0))
        e_in = np.mean(x[2000:-2000] ** 2)
        e_out = np.mean(out[500:-500] ** 2)
        assert abs(e_out / e_in - 1) <= 0.02

    def test_aliasing_suppressed(self):
        t = np.arange(40_000) / 400.0
        out = resample_array(np.sin(2 * np.pi * 120 * t), ResampleSpec(400, 100))
        # 120 Hz is above the new Nyquist; only leakage may remain
        assert np.sqrt(np.mean(out[500:-500] ** 2)) < 1e-3

    def test_too_short(self):
        with pytest.raises(InputTooShort):
            resample_array(np.ones(10), ResampleSpec(400, 100))


class TestMinMax:
    @pytest.mark.parametrize("x,expected", [([0, 5, 10], [-1, 0, 1]), ([7, 7, 7], [0, 0, 0]), ([-3, 1], [-1, 1])])
    def test_examples(self, x, expected):
        np.testing.assert_allclose(minmax_scale_array(np.array(x, float)), expected, atol=1e-15)

    def test_recording(self):
        out = minmax_scale(Recording([2.0, 4.0, 3.0], 100.0, "a"))
        np.testing.assert_allclose(out.samples, [-1, 1, 0])
        assert out.subject_id == "a"

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e6, 1e6)))
    def test_range_and_idempotence(self, x):
        y = minmax_scale_array(x)
        if x.max() == x.min():
            assert np.all(y == 0)
            return
        assert y.min() == -1.0 and y.max() == 1.0
        np.testing.assert_allclose(minmax_scale_array(y), y, atol=1e-12, rtol=0)


class TestEpochize:
    def _rec(self, n):
        return Recording(np.arange(n, dtype=float), 100.0)

    def test_tail_dropped(self):
        pairs = epochize(self._rec(45_000), np.zeros(45_000), 20)
        assert len(pairs) == 22
        assert all(p.signal.size == 2000 and p.target.size == 2000 for p in pairs)
        assert pairs[-1].signal[-1] == 21 * 2000 + 1999

    def test_single_epoch(self):
        assert len(epochize(self._rec(2000), np.zeros(2000))) == 1

    def test_too_short(self):
        assert epochize(self._rec(1999), np.zeros(1999)) == []

    def test_alignment(self):
        mask = (np.arange(6000) % 7 == 0).astype(np.uint8)
        pairs = epochize(self._rec(6000), mask)
        np.testing.assert_array_equal(np.concatenate([p.target for p in pairs]), mask)

    def test_mismatched_mask(self):
        with pytest.raises(ValueError):
            epochize(self._rec(100), np.zeros(99))
