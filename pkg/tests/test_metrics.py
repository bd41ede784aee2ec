import math

import numpy as np
import pytest

from metrics import (
    EvalTrace,
    SpectrumTooShort,
    fft_amplitude,
    high_band_amplitude,
    mae,
    power_proxy,
    smoothness,
    spectrum_frame,
    summarize,
)


def direct_dft_amplitude(x):
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return np.abs((x[None, :] * np.exp(-2j * math.pi * k * t / n)).sum(axis=1))


def tone(freq, n=100, rate=100.0, amplitude=1.0):
    return amplitude * np.sin(2 * math.pi * freq * np.arange(n) / rate)


def test_amplitude_matches_direct_dft(rng):
    x = rng.normal(size=37)
    freqs, amps = fft_amplitude(x, sample_rate=20.0)
    assert amps == pytest.approx(direct_dft_amplitude(x), abs=1e-9)
    assert freqs[1] == pytest.approx(20.0 / 37)


def test_unit_tone_amplitude():
    _, amps = fft_amplitude(tone(10), sample_rate=100.0)
    assert amps[10] == pytest.approx(50.0)


def test_smoothness_of_single_tone():
    assert smoothness(tone(10, amplitude=2.0), 100.0) == pytest.approx(2.0 * 10 / 100.0)


def test_smoothness_ignores_offset():
    assert smoothness(np.full(64, 0.7), 100.0) == pytest.approx(0.0, abs=1e-12)
    assert smoothness(tone(5) + 3.0, 100.0) == pytest.approx(smoothness(tone(5), 100.0))


def test_smoothness_averages_channels():
    signal = np.stack([tone(10), np.zeros(100)], axis=1)
    assert smoothness(signal, 100.0) == pytest.approx(0.05)


def test_faster_oscillation_is_less_smooth():
    assert smoothness(tone(30), 100.0) > smoothness(tone(3), 100.0)


def test_short_signal_raises():
    with pytest.raises(SpectrumTooShort):
        smoothness(np.zeros(7), 100.0)


def test_high_band():
    assert high_band_amplitude(tone(40), 100.0) == pytest.approx(50.0)
    assert high_band_amplitude(tone(5), 100.0) == pytest.approx(0.0, abs=1e-9)


def test_mae_and_power():
    trace = EvalTrace(setpoints=[[10, 0, 0], [0, 0, 0]], measured=[[0, 0, 0], [0, 0, 6]],
                      duty=np.full((2, 4), 0.5), sample_rate=100.0)
    assert mae(trace) == pytest.approx(16 / 6)
    assert power_proxy(trace) == pytest.approx(1.0)


def test_trace_validation():
    with pytest.raises(ValueError):
        EvalTrace(np.zeros((3, 3)), np.zeros((2, 3)), np.zeros((3, 4)), 100.0)
    with pytest.raises(ValueError):
        EvalTrace(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 4)), 0.0)


def test_summarize_short_trace_has_nan_smoothness():
    trace = EvalTrace(np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((4, 4)), 100.0)
    stats = summarize(trace)
    assert stats["mae"] == 0.0
    assert math.isnan(stats["sm"])


def test_spectrum_frame():
    duty = np.stack([tone(10)] * 4, axis=1)
    frame = spectrum_frame(duty, 100.0)
    assert list(frame.columns) == ["frequency", "amplitude"]
    assert frame.loc[frame["amplitude"].idxmax(), "frequency"] == pytest.approx(10.0)
