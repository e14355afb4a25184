import numpy as np
import pytest
from scipy import signal as sps
from scipy.stats import poisson

from augunet1d.events import peak_frequency
from augunet1d.states import detect_noise, detect_sleep, interval_iou
from augunet1d.synth import CapacityError, SynthConfig, generate, pink_noise, swd_waveform


@pytest.fixture(scope="module")
def hour():
    return generate(SynthConfig(duration_s=3600, seed=11))


class TestCounts:
    def test_fixed_seed_within_interval(self, hour):
        _, swd, _, _ = generate(SynthConfig(duration_s=3600, swd_rate_per_hour=24, seed=5))
        assert 9 <= len(swd) <= 42

    def test_counts_follow_poisson(self):
        lo, hi = poisson.interval(0.99, 24)
        counts = [len(generate(SynthConfig(duration_s=3600, swd_rate_per_hour=24, seed=s,
                                           sleep_fraction=0.0))[1]) for s in range(60)]
        inside = np.mean([lo <= c <= hi for c in counts])
        assert inside >= 0.95
        assert abs(np.mean(counts) - 24) <= 3 * np.sqrt(24 / 60)

    def test_zero_rate(self):
        _, swd, _, _ = generate(SynthConfig(duration_s=600, swd_rate_per_hour=0, seed=1))
        assert len(swd) == 0


class TestDeterminism:
    def test_bit_identical(self):
        cfg = SynthConfig(duration_s=600, seed=3)
        a, b = generate(cfg), generate(cfg)
        assert a[0].samples.tobytes() == b[0].samples.tobytes()
        assert all(x == y for x, y in zip(a[1:], b[1:]))

    def test_seed_matters(self):
        a = generate(SynthConfig(duration_s=600, seed=3))[0]
        b = generate(SynthConfig(duration_s=600, seed=4))[0]
        assert a.samples.tobytes() != b.samples.tobytes()


class TestEvents:
    def test_peak_frequencies(self, hour):
        rec, swd, _, _ = hour
        assert len(swd) > 0
        for s, e in swd.spans():
            assert abs(peak_frequency(rec, (s, e)) - 5.72) <= 2.25

    def test_durations_floor(self, hour):
        _, swd, _, _ = hour
        assert min(swd.durations()) >= 1.0

    def test_no_overlap_with_each_other_or_noise(self, hour):
        _, swd, _, noise = hour
        spans = swd.spans() + noise.spans()
        spans.sort()
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))

    @pytest.mark.parametrize("f0", np.linspace(4.22, 7.22, 7))
    def test_labeling_criteria(self, f0):
        # shortest burst the generator emits at this f0
        duration = max(1.0, 6.0 / f0 + 0.3)
        for seed in range(10):
            burst = swd_waveform(f0, duration, 100.0, np.random.default_rng(seed))
            spikes, _ = sps.find_peaks(-burst, prominence=0.5 * np.max(-burst))
            assert len(spikes) >= 5
            assert np.diff(spikes).min() / 100.0 >= 0.05

    def test_noise_is_extreme(self, hour):
        rec, _, _, noise = hour
        x = rec.samples
        for s, e in noise.spans():
            seg = x[int(s * 100):int(e * 100)]
            assert np.max(np.abs(seg - x.mean())) >= 25 * x.std()


class TestGroundTruthAgreement:
    def test_noise_detector(self, hour):
        rec, _, _, noise = hour
        flagged = detect_noise(rec).intervals.spans()
        for s, e in noise.spans():
            assert any(a <= s and e <= b for a, b in flagged)
        assert all(any(a < e2 and s2 < b for s2, e2 in noise.spans()) for a, b in flagged)

    def test_sleep_detector(self, hour):
        rec, _, sleep, _ = hour
        assert interval_iou(detect_sleep(rec).intervals, sleep) >= 0.9


class TestPieces:
    def test_pink_spectrum_slope(self):
        x = pink_noise(2 ** 18, 100.0, np.random.default_rng(0))
        f, p = sps.welch(x, fs=100.0, nperseg=4096)
        band = (f >= 1) & (f <= 30)
        slope = np.polyfit(np.log(f[band]), np.log(p[band]), 1)[0]
        assert abs(slope + 1) <= 0.1
        assert x.std() == pytest.approx(1.0)

    def test_waveform_unit_rms_core(self):
        burst = swd_waveform(5.72, 6.0, 100.0, np.random.default_rng(0))
        assert burst.size == 600
        assert np.sqrt(np.mean(burst[15:-15] ** 2)) == pytest.approx(1.0, rel=0.05)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"duration_s": 0}, {"swd_rate_per_hour": -1},
                                        {"swd_amplitude_ratio": 1.0}, {"sleep_fraction": 1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            generate(SynthConfig(duration_s=120, swd_rate_per_hour=3000, seed=0))

    def test_round_trip(self):
        cfg = SynthConfig(duration_s=10, seed=2)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg
