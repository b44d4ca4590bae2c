"""Reference short-time objective intelligibility, written first and kept
independent of the production code path.

Straight transliteration of the standard measure: 10 kHz analysis,
256-sample MATLAB-style Hann frames at hop 128 zero-padded to a 512 FFT,
15 one-third-octave bands starting at 150 Hz, 40 dB silence gating against
the loudest clean frame, 30-frame segments, -15 dB clipped normalization,
and a plain mean of per-segment per-band correlation coefficients.

Everything is explicit loops; resampling goes through
scipy.signal.resample_poly rather than the package resampler.
"""

import math

import numpy as np
from scipy.signal import resample_poly

FS = 10000
FRAME = 256
HOP = 128
NFFT = 512
NUM_BANDS = 15
MIN_FREQ = 150.0
SEG_FRAMES = 30
BETA_DB = -15.0
DYN_RANGE_DB = 40.0


def _hann_matlab(n):
    # MATLAB hanning(n): endpoints excluded.
    k = np.arange(1, n + 1)
    return 0.5 - 0.5 * np.cos(2.0 * math.pi * k / (n + 1))


def _frames(x):
    out = []
    start = 0
    while start + FRAME <= len(x):
        out.append(x[start : start + FRAME].copy())
        start += HOP
    return out


def _remove_silent(x, y):
    w = _hann_matlab(FRAME)
    xf = [w * f for f in _frames(x)]
    yf = [w * f for f in _frames(y)]
    if not xf:
        return np.zeros(0), np.zeros(0)
    energies = [20.0 * math.log10(np.linalg.norm(f) + 1e-300) for f in xf]
    peak = max(energies)
    keep = [i for i, e in enumerate(energies) if peak - DYN_RANGE_DB - e < 0]
    if not keep:
        return np.zeros(0), np.zeros(0)
    n_out = (len(keep) - 1) * HOP + FRAME
    xs = np.zeros(n_out)
    ys = np.zeros(n_out)
    for j, i in enumerate(keep):
        xs[j * HOP : j * HOP + FRAME] += xf[i]
        ys[j * HOP : j * HOP + FRAME] += yf[i]
    return xs, ys


def _band_edges():
    """Map each one-third-octave band to [lo, hi) FFT bin indices."""
    freqs = [k * FS / NFFT for k in range(NFFT // 2 + 1)]
    edges = []
    for band in range(NUM_BANDS):
        f_lo = MIN_FREQ * 2.0 ** ((2 * band - 1) / 6.0)
        f_hi = MIN_FREQ * 2.0 ** ((2 * band + 1) / 6.0)
        lo = min(range(len(freqs)), key=lambda i: (freqs[i] - f_lo) ** 2)
        hi = min(range(len(freqs)), key=lambda i: (freqs[i] - f_hi) ** 2)
        edges.append((lo, hi))
    return edges


def _third_octave_envelopes(x):
    w = _hann_matlab(FRAME)
    spectra = [np.abs(np.fft.rfft(w * f, NFFT)) for f in _frames(x)]
    edges = _band_edges()
    env = np.zeros((NUM_BANDS, len(spectra)))
    for m, spec in enumerate(spectra):
        power = spec**2
        for j, (lo, hi) in enumerate(edges):
            env[j, m] = math.sqrt(sum(power[lo:hi]))
    return env


def reference_stoi(ref, test, sample_rate):
    """Reference STOI score for two equal-rate signals."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    n = min(len(ref), len(test))
    ref, test = ref[:n], test[:n]
    if sample_rate != FS:
        up = FS // math.gcd(FS, sample_rate)
        down = sample_rate // math.gcd(FS, sample_rate)
        ref = resample_poly(ref, up, down, window=("kaiser", 8.6))
        test = resample_poly(test, up, down, window=("kaiser", 8.6))
    ref, test = _remove_silent(ref, test)

    x = _third_octave_envelopes(ref)
    y = _third_octave_envelopes(test)
    n_frames = x.shape[1]
    if n_frames < SEG_FRAMES:
        raise ValueError("too little speech-active signal for reference STOI")

    clip = 10.0 ** (-BETA_DB / 20.0)
    total = 0.0
    count = 0
    for m in range(SEG_FRAMES, n_frames + 1):
        for j in range(NUM_BANDS):
            xs = x[j, m - SEG_FRAMES : m]
            ys = y[j, m - SEG_FRAMES : m]
            alpha = np.linalg.norm(xs) / (np.linalg.norm(ys) + 1e-300)
            yp = np.minimum(alpha * ys, (1.0 + clip) * xs)
            xc = xs - xs.mean()
            yc = yp - yp.mean()
            denom = np.linalg.norm(xc) * np.linalg.norm(yc)
            total += float(xc @ yc / denom) if denom > 0 else 0.0
            count += 1
    return total / count
