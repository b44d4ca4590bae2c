"""Deterministic analysis/synthesis front-end at exactly 75 frames per second.

Analysis: 24 kHz audio -> log-mel (fft 1024, hop 320, 80 mels) -> mean
removal -> orthonormal projection onto the top-D principal components.
Synthesis: inverse projection -> mel-to-linear magnitudes via the
filterbank pseudo-inverse (clamped at zero) -> Griffin-Lim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dsp import (
    AudioBuffer,
    MelFilterbank,
    Spectrogram,
    StftConfig,
    griffin_lim,
    log_mel,
    mel_filterbank,
    stft,
)
from .errors import (
    EmptyInput,
    InsufficientData,
    InvalidInput,
    SampleRateMismatch,
)

SAMPLE_RATE = 24000
FRAME_RATE = 75
FFT_SIZE = 1024
HOP = SAMPLE_RATE // FRAME_RATE  # 320 samples: hop * 75 == sample_rate exactly
N_MELS = 80
LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class LatentSequence:
    """T x D matrix of latent frames at 75 Hz."""

    frames: np.ndarray
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InvalidInput(f"latents must be a nonempty T x D matrix, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InvalidInput("latents contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class FrontendModel:
    """Fitted analysis front-end: log-mel statistics plus a PCA projection."""

    mean: np.ndarray                      # (n_mels,)
    basis: np.ndarray                     # (D, n_mels), orthonormal rows
    explained_variance: np.ndarray        # all n_mels eigenvalue fractions
    seed: int
    stft_config: StftConfig = field(default_factory=lambda: StftConfig(FFT_SIZE, HOP))
    sample_rate: int = SAMPLE_RATE
    n_mels: int = N_MELS
    f_min: float = 0.0
    f_max: float = SAMPLE_RATE / 2
    floor: float = LOG_FLOOR

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[0]

    def filterbank(self) -> MelFilterbank:
        return mel_filterbank(
            self.sample_rate, self.stft_config.fft_size, self.n_mels, self.f_min, self.f_max
        )


def _analysis_log_mel(model_like, audio: AudioBuffer, fb: MelFilterbank) -> np.ndarray:
    """Log-mel frames with the codec framing: exactly ceil(len/hop) frames.

    The tail is reflect-padded to a whole number of hops; the trailing
    center-padded STFT frame is dropped so 1 s of audio gives 75 frames.
    """
    config = model_like.stft_config
    hop = config.hop
    n = len(audio)
    if n == 0:
        raise EmptyInput("cannot encode empty audio")
    remainder = n % hop
    samples = audio.samples
    if remainder:
        pad = hop - remainder
        samples = np.pad(samples, (0, pad), mode="reflect" if n > 1 else "edge")
    spec = stft(AudioBuffer(samples, audio.sample_rate), config)
    mags = np.abs(spec.frames[:-1])  # drop the final frame: T = len/hop
    return np.log(np.maximum(mags @ fb.weights.T, model_like.floor))


class _FrontendShape:
    """Just enough structure to run analysis before a model exists."""

    stft_config = StftConfig(FFT_SIZE, HOP)
    floor = LOG_FLOOR


def fit_frontend(training_audio: Iterable[AudioBuffer], latent_dim: int, seed: int) -> FrontendModel:
    """Fit the PCA projection of the log-mel front-end.

    Args:
        training_audio: iterable of 24 kHz AudioBuffers.
        latent_dim: D, number of retained principal components (<= 80).
        seed: recorded for provenance; the fit itself is deterministic.

    Raises:
        InsufficientData: fewer than 10 * D training frames.
        SampleRateMismatch: any buffer not at 24 kHz.
    """
    if not 1 <= latent_dim <= N_MELS:
        raise InvalidInput(f"latent_dim must be in [1, {N_MELS}], got {latent_dim}")
    if seed < 0:
        raise InvalidInput(f"seed must be nonnegative, got {seed}")
    fb = mel_filterbank(SAMPLE_RATE, FFT_SIZE, N_MELS, 0.0, SAMPLE_RATE / 2)
    shape = _FrontendShape()

    count = 0
    total = np.zeros(N_MELS)
    outer = np.zeros((N_MELS, N_MELS))
    for audio in training_audio:
        if audio.sample_rate != SAMPLE_RATE:
            raise SampleRateMismatch(
                f"training audio at {audio.sample_rate} Hz, expected {SAMPLE_RATE}"
            )
        frames = _analysis_log_mel(shape, audio, fb)
        count += frames.shape[0]
        total += frames.sum(axis=0)
        outer += frames.T @ frames

    if count < 10 * latent_dim:
        raise InsufficientData(
            f"need at least {10 * latent_dim} training frames for D={latent_dim}, got {count}"
        )
    mean = total / count
    cov = outer / count - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order].T  # rows are principal directions
    # Fix the sign convention so refits are reproducible bit for bit.
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    explained = eigvals / eigvals.sum() if eigvals.sum() > 0 else eigvals
    return FrontendModel(
        mean=mean,
        basis=components[:latent_dim].copy(),
        explained_variance=explained,
        seed=seed,
    )


def encode_latent(model: FrontendModel, audio: AudioBuffer) -> LatentSequence:
    """Project audio onto the latent space; 1 s of 24 kHz audio -> 75 frames."""
    if audio.sample_rate != model.sample_rate:
        raise SampleRateMismatch(
            f"audio at {audio.sample_rate} Hz, model expects {model.sample_rate}; resample first"
        )
    frames = _analysis_log_mel(model, audio, model.filterbank())
    return LatentSequence((frames - model.mean) @ model.basis.T)


_MEL_INVERSION_STEPS = 10


def decode_latent(model: FrontendModel, latents: LatentSequence, gl_iterations: int = 32) -> AudioBuffer:
    """Invert the latent projection and reconstruct a waveform.

    Linear magnitudes start from the clamped filterbank pseudo-inverse and
    are sharpened by a few multiplicative nonnegative updates before
    Griffin-Lim.  Output length is exactly n_frames * hop samples.
    """
    if latents.dim != model.latent_dim:
        raise InvalidInput(
            f"latents have dimension {latents.dim}, model expects {model.latent_dim}"
        )
    logmel = latents.frames @ model.basis + model.mean
    mel_amp = np.exp(logmel)
    weights = model.filterbank().weights
    pinv = np.linalg.pinv(weights)  # (n_bins, n_mels)
    mags = np.maximum(mel_amp @ pinv.T, 0.0)
    col_sum = np.maximum(weights.sum(axis=0), 1e-12)
    for _ in range(_MEL_INVERSION_STEPS):
        ratio = mel_amp / np.maximum(mags @ weights.T, 1e-12)
        mags *= (ratio @ weights) / col_sum
    # The codec framing dropped the trailing analysis frame; synthesize it by
    # repeating the last magnitude frame so reconstruction spans T * hop.
    mags = np.vstack([mags, mags[-1:]])
    spec = Spectrogram(mags, model.stft_config, model.sample_rate)
    return griffin_lim(spec, iterations=gl_iterations)
