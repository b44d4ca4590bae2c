"""Objective reconstruction metrics.

Multi-scale log-mel and linear-magnitude L1 losses, short-time objective
intelligibility (STOI), a signal-to-noise utility, and an adapter that
shells out to an external wideband PESQ tool.
"""

from __future__ import annotations

import math
import os
import re
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

from . import wavio
from .dsp import AudioBuffer, StftConfig, mel_filterbank, resample, stft
from .errors import (
    ExternalToolError,
    InsufficientDuration,
    InvalidConfig,
    InvalidInput,
    SampleRateMismatch,
)


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    higher_is_better: bool

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidInput(f"metric {self.name} is not finite: {self.value}")


@dataclass(frozen=True)
class MultiScaleConfig:
    """Spectral analysis resolutions for the loss metrics.

    scales: (fft_size, hop, n_mels) triples; n_mels may be None for scales
    used only by the linear-magnitude loss.
    """

    scales: tuple = (
        (256, 64, 40),
        (512, 128, 80),
        (1024, 256, 160),
        (2048, 512, 320),
    )
    floor: float = 1e-5

    def __post_init__(self):
        if not self.scales:
            raise InvalidConfig("need at least one scale")
        for fft_size, hop, _ in self.scales:
            if hop > fft_size:
                raise InvalidConfig(f"hop {hop} exceeds fft_size {fft_size}")
        if self.floor <= 0:
            raise InvalidConfig("floor must be positive")

    def snapshot(self) -> dict:
        return {"scales": [list(s) for s in self.scales], "floor": self.floor}


def _aligned_pair(ref: AudioBuffer, test: AudioBuffer):
    if ref.sample_rate != test.sample_rate:
        raise SampleRateMismatch(
            f"reference at {ref.sample_rate} Hz, test at {test.sample_rate} Hz"
        )
    n = min(len(ref), len(test))
    if n == 0:
        raise InvalidInput("cannot compare empty signals")
    return (
        AudioBuffer(ref.samples[:n], ref.sample_rate),
        AudioBuffer(test.samples[:n], test.sample_rate),
    )


def _gain_normalized_magnitude(buf: AudioBuffer, config: StftConfig) -> np.ndarray:
    # Dividing by the window gain (fft/2 for Hann) keeps magnitudes, and so
    # the per-scale loss terms, on a common footing across resolutions.
    return np.abs(stft(buf, config).frames) / (config.fft_size / 2)


def mel_loss(ref: AudioBuffer, test: AudioBuffer, cfg: MultiScaleConfig | None = None) -> MetricValue:
    """Sum over scales of the mean L1 distance between log-mel spectrograms."""
    cfg = cfg or MultiScaleConfig()
    ref, test = _aligned_pair(ref, test)
    total = 0.0
    for fft_size, hop, n_mels in cfg.scales:
        if n_mels is None:
            raise InvalidConfig("mel loss needs n_mels at every scale")
        n_mels = min(n_mels, fft_size // 2)
        fb = mel_filterbank(ref.sample_rate, fft_size, n_mels, 0.0, ref.sample_rate / 2)
        config = StftConfig(fft_size, hop)
        a = np.log(np.maximum(_gain_normalized_magnitude(ref, config) @ fb.weights.T, cfg.floor))
        b = np.log(np.maximum(_gain_normalized_magnitude(test, config) @ fb.weights.T, cfg.floor))
        total += float(np.mean(np.abs(a - b)))
    return MetricValue("mel", total, higher_is_better=False)


def stft_loss(ref: AudioBuffer, test: AudioBuffer, cfg: MultiScaleConfig | None = None) -> MetricValue:
    """Sum over scales of the mean L1 distance between linear magnitudes."""
    cfg = cfg or MultiScaleConfig()
    ref, test = _aligned_pair(ref, test)
    total = 0.0
    for fft_size, hop, _ in cfg.scales:
        config = StftConfig(fft_size, hop)
        a = _gain_normalized_magnitude(ref, config)
        b = _gain_normalized_magnitude(test, config)
        total += float(np.mean(np.abs(a - b)))
    return MetricValue("stft", total, higher_is_better=False)


# --- STOI ------------------------------------------------------------------

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30
_STOI_BETA_DB = -15.0
_STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _stoi_window() -> np.ndarray:
    # Endpoint-free Hann, matching the reference listening-metric convention.
    k = np.arange(1, _STOI_FRAME + 1)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / (_STOI_FRAME + 1))


def _stoi_frames(x: np.ndarray) -> np.ndarray:
    n_frames = (len(x) - _STOI_FRAME) // _STOI_HOP + 1
    if n_frames <= 0:
        return np.zeros((0, _STOI_FRAME))
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n_frames)[:, None]
    return x[idx]


def _third_octave_matrix() -> np.ndarray:
    freqs = np.arange(_STOI_NFFT // 2 + 1) * (_STOI_FS / _STOI_NFFT)
    bands = np.arange(_STOI_BANDS)
    f_lo = _STOI_MIN_FREQ * 2.0 ** ((2 * bands - 1) / 6.0)
    f_hi = _STOI_MIN_FREQ * 2.0 ** ((2 * bands + 1) / 6.0)
    matrix = np.zeros((_STOI_BANDS, len(freqs)))
    for j in range(_STOI_BANDS):
        lo = int(np.argmin((freqs - f_lo[j]) ** 2))
        hi = int(np.argmin((freqs - f_hi[j]) ** 2))
        matrix[j, lo:hi] = 1.0
    return matrix


def stoi(ref: AudioBuffer, test: AudioBuffer) -> MetricValue:
    """Short-time objective intelligibility of `test` against `ref`.

    Both signals are resampled to 10 kHz; frames more than 40 dB below the
    loudest reference frame are discarded; one-third-octave envelopes are
    compared by correlation over 384 ms segments after clipped gain
    normalization.  The score is the plain mean of those correlations.

    Raises:
        InsufficientDuration: fewer than 30 speech-active frames survive.
    """
    ref, test = _aligned_pair(ref, test)
    x = resample(ref, _STOI_FS).samples
    y = resample(test, _STOI_FS).samples

    w = _stoi_window()
    xf = _stoi_frames(x) * w
    yf = _stoi_frames(y) * w
    if xf.shape[0] == 0:
        raise InsufficientDuration("signal shorter than one analysis frame")
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energies.max() - _STOI_DYN_RANGE - energies < 0
    xf, yf = xf[keep], yf[keep]
    if xf.shape[0] == 0:
        raise InsufficientDuration("no speech-active frames above the energy gate")
    n_active = (xf.shape[0] - 1) * _STOI_HOP + _STOI_FRAME
    x_active = np.zeros(n_active)
    y_active = np.zeros(n_active)
    for i in range(xf.shape[0]):
        x_active[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += xf[i]
        y_active[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += yf[i]

    spec_x = np.fft.rfft(_stoi_frames(x_active) * w, n=_STOI_NFFT, axis=1)
    spec_y = np.fft.rfft(_stoi_frames(y_active) * w, n=_STOI_NFFT, axis=1)
    obm = _third_octave_matrix()
    env_x = np.sqrt(np.abs(spec_x) ** 2 @ obm.T).T  # (bands, frames)
    env_y = np.sqrt(np.abs(spec_y) ** 2 @ obm.T).T
    n_frames = env_x.shape[1]
    if n_frames < _STOI_SEG:
        raise InsufficientDuration(
            f"need at least {_STOI_SEG} speech-active frames (384 ms), got {n_frames}"
        )

    seg_starts = np.arange(n_frames - _STOI_SEG + 1)
    idx = seg_starts[:, None] + np.arange(_STOI_SEG)[None, :]
    xs = env_x[:, idx]  # (bands, segments, 30)
    ys = env_y[:, idx]
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / (
        np.linalg.norm(ys, axis=2, keepdims=True) + _EPS
    )
    clip = 10.0 ** (-_STOI_BETA_DB / 20.0)
    yp = np.minimum(alpha * ys, (1.0 + clip) * xs)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = yp - yp.mean(axis=2, keepdims=True)
    denom = np.linalg.norm(xc, axis=2) * np.linalg.norm(yc, axis=2)
    corr = np.where(denom > 0, np.sum(xc * yc, axis=2) / np.where(denom > 0, denom, 1.0), 0.0)
    return MetricValue("stoi", float(corr.mean()), higher_is_better=True)


# --- PESQ adapter and SNR ---------------------------------------------------

PESQ_TOOL_ENV = "RVQLAB_PESQ_TOOL"
_PESQ_RANGE = (-0.5, 4.64)


def pesq_adapter(
    ref: AudioBuffer, test: AudioBuffer, tool_path: str | None = None
) -> MetricValue | None:
    """Score a pair with an external wideband PESQ tool, if one is configured.

    The tool is invoked as `tool ref.wav test.wav` on 16 kHz mono PCM16
    files and must print a conformant score (the last float on stdout is
    taken).  Returns None when no tool is configured; that is an expected
    state, not an error.
    """
    tool = tool_path or os.environ.get(PESQ_TOOL_ENV)
    if not tool:
        return None
    ref, test = _aligned_pair(ref, test)
    ref16 = resample(ref, 16000)
    test16 = resample(test, 16000)
    with tempfile.TemporaryDirectory(prefix="rvqlab_pesq_") as workdir:
        ref_path = os.path.join(workdir, "ref.wav")
        test_path = os.path.join(workdir, "test.wav")
        wavio.write_wav(ref_path, ref16, encoding="pcm16")
        wavio.write_wav(test_path, test16, encoding="pcm16")
        try:
            proc = subprocess.run(
                [tool, ref_path, test_path],
                capture_output=True,
                text=True,
                timeout=300,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalToolError(f"PESQ tool {tool!r} failed to run: {exc}") from exc
    if proc.returncode != 0:
        raise ExternalToolError(
            f"PESQ tool exited with {proc.returncode}: {proc.stderr.strip() or proc.stdout.strip()}"
        )
    floats = re.findall(r"-?\d+(?:\.\d+)?", proc.stdout)
    if not floats:
        raise ExternalToolError(f"PESQ tool printed no score: {proc.stdout!r}")
    score = float(floats[-1])
    if not _PESQ_RANGE[0] <= score <= _PESQ_RANGE[1]:
        raise ExternalToolError(f"PESQ score {score} outside {_PESQ_RANGE}")
    return MetricValue("pesq", score, higher_is_better=True)


def snr(ref: AudioBuffer, test: AudioBuffer) -> MetricValue:
    """10*log10(ref power / error power), capped at 120 dB on identity."""
    if len(ref) != len(test):
        raise InvalidInput(f"length mismatch: {len(ref)} vs {len(test)}")
    ref_power = float(np.sum(ref.samples**2))
    if ref_power == 0.0:
        raise InvalidInput("reference signal is identically zero")
    err_power = float(np.sum((ref.samples - test.samples) ** 2))
    if err_power == 0.0:
        value = 120.0
    else:
        value = min(120.0, 10.0 * math.log10(ref_power / err_power))
    return MetricValue("snr", value, higher_is_better=True)
