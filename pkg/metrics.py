"""
Evaluation metrics
Tracking MAE, FFT smoothness (Sm) and a squared-duty power proxy
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

MIN_SPECTRUM_SAMPLES = 8


class SpectrumTooShort(ValueError):
    """Fewer samples than a meaningful spectrum needs"""


@dataclass
class EvalTrace:
    """
    One flight's worth of samples

    Attributes:
        setpoints: (n, 3) targets, deg/s
        measured: (n, 3) angular velocities, deg/s
        duty: (n, 4) motor duty in [0, 1]
        sample_rate: Samples per second
    """

    setpoints: np.ndarray
    measured: np.ndarray
    duty: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.setpoints = np.asarray(self.setpoints, dtype=np.float64)
        self.measured = np.asarray(self.measured, dtype=np.float64)
        self.duty = np.asarray(self.duty, dtype=np.float64)
        if not (len(self.setpoints) == len(self.measured) == len(self.duty)):
            raise ValueError("Trace sequences must have equal lengths")
        if self.sample_rate <= 0:
            raise ValueError("Sample rate must be positive")

    def __len__(self) -> int:
        return len(self.setpoints)


def mae(trace: EvalTrace) -> float:
    """Mean absolute tracking error over time and axes (deg/s)"""
    if len(trace) == 0:
        return 0.0
    return float(np.mean(np.abs(trace.setpoints - trace.measured)))


def fft_amplitude(signal, sample_rate: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-sided DFT amplitude spectrum

    Amplitudes are raw |X_k|: a unit tone on a bin gives n/2.

    Returns:
        (frequencies in Hz, amplitudes)
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[0]
    amplitudes = np.abs(np.fft.rfft(x, axis=0))
    return np.fft.rfftfreq(n, d=1.0 / sample_rate), amplitudes


def smoothness(signal, sample_rate: float) -> float:
    """
    Sm = 2/(n*fs) * sum_i A_i * f_i over f_i > 0, mean-removed signal

    Multi-channel input (n, channels) averages Sm over channels.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < MIN_SPECTRUM_SAMPLES:
        raise SpectrumTooShort(f"Need at least {MIN_SPECTRUM_SAMPLES} samples, got {n}")
    x = x - x.mean(axis=0)
    freqs, amps = fft_amplitude(x, sample_rate)
    positive = freqs > 0
    per_channel = 2.0 / (n * sample_rate) * (amps[positive] * freqs[positive, None]).sum(axis=0)
    return float(per_channel.mean())


def power_proxy(trace: EvalTrace) -> float:
    """Mean over time of the summed squared motor duty"""
    if len(trace) == 0:
        return 0.0
    return float(np.mean(np.sum(trace.duty ** 2, axis=1)))


def high_band_amplitude(signal, sample_rate: float, min_fraction: float = 0.2) -> float:
    """Integrated amplitude above min_fraction * Nyquist, mean over channels"""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    freqs, amps = fft_amplitude(x - x.mean(axis=0), sample_rate)
    band = freqs > min_fraction * sample_rate / 2.0
    return float(amps[band].sum(axis=0).mean())


def spectrum_frame(signal, sample_rate: float) -> pd.DataFrame:
    """(frequency, amplitude) rows, amplitude averaged over channels"""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    freqs, amps = fft_amplitude(x - x.mean(axis=0), sample_rate)
    return pd.DataFrame({"frequency": freqs, "amplitude": amps.mean(axis=1)})


def summarize(trace: EvalTrace) -> dict:
    """MAE, Sm of motor duty, and power proxy for one trace"""
    return {
        "mae": mae(trace),
        "sm": smoothness(trace.duty, trace.sample_rate) if len(trace) >= MIN_SPECTRUM_SAMPLES else float("nan"),
        "power": power_proxy(trace),
    }
