"""WAV loading and deterministic shaping for the audio encoder.

Clips longer than the encoder window are center-cropped; shorter clips are
repeat-padded. Both choices are deterministic, so re-extracting a dataset
always reproduces the same embeddings.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly


def load_wav_mono(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 in [-1, 1], mixing channels to mono."""
    rate, data = wavfile.read(str(path))
    data = np.asarray(data)
    if data.dtype == np.int16:
        wave = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        wave = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        wave = (data.astype(np.float64) - 128.0) / 128.0
    else:
        wave = data.astype(np.float64)
    if wave.ndim == 2:
        wave = wave.mean(axis=1)
    return wave, int(rate)


def resample(wave: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return np.asarray(wave, dtype=np.float64)
    g = math.gcd(rate, target_rate)
    return resample_poly(np.asarray(wave, dtype=np.float64), target_rate // g, rate // g)


def fit_to_window(wave: np.ndarray, window: int) -> np.ndarray:
    """Center-crop long clips, repeat-pad short ones, to exactly ``window`` samples."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1 or window < 1:
        raise ValueError("need a 1-D waveform and a positive window")
    if len(wave) == 0:
        return np.zeros(window)
    if len(wave) > window:
        start = (len(wave) - window) // 2
        return wave[start : start + window]
    if len(wave) < window:
        reps = -(-window // len(wave))  # ceil division
        return np.tile(wave, reps)[:window]
    return wave


def prepare_clip(path: str | Path, target_rate: int, window: int) -> np.ndarray:
    """Load, mono-mix, resample and shape one clip for the encoder."""
    wave, rate = load_wav_mono(path)
    return fit_to_window(resample(wave, rate, target_rate), window)
