"""Multi-stage residual vector quantization.

Each stage projects the current residual into a low-dimensional code space,
L2-normalizes it, and picks the nearest unit-norm codebook entry; the
entry's image under the stage's output projection is subtracted and the
next stage quantizes what is left.  Codebooks are trained by k-means++
seeded Lloyd iterations on the normalized projections, so training is
deterministic given a seed.  Streams are embedded: the first q' stages of
any stream are a valid lower-rate stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptTokens, InsufficientData, InvalidConfig, InvalidInput
from .frontend import FRAME_RATE, LatentSequence

_LLOYD_MAX_ITER = 100
_LLOYD_REL_TOL = 1e-6
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class RvqConfig:
    n_stages: int                    # Q
    codebook_size: int = 1024        # K = 2**bits
    code_dim: int = 8
    latent_dim: int = 64
    frame_rate: int = FRAME_RATE
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_stages <= 32:
            raise InvalidConfig(f"n_stages must be in [1, 32], got {self.n_stages}")
        if self.codebook_size < 2 or self.codebook_size & (self.codebook_size - 1):
            raise InvalidConfig(f"codebook_size must be a power of two, got {self.codebook_size}")
        if self.codebook_size > 1 << 15:
            # the stream header stores K in a u16 field
            raise InvalidConfig(f"codebook_size above 2^15 is not supported, got {self.codebook_size}")
        if not 1 <= self.code_dim <= self.latent_dim:
            raise InvalidConfig(
                f"code_dim must be in [1, latent_dim={self.latent_dim}], got {self.code_dim}"
            )
        if self.frame_rate <= 0:
            raise InvalidConfig(f"frame_rate must be positive, got {self.frame_rate}")
        if self.seed < 0:
            raise InvalidConfig(f"seed must be nonnegative, got {self.seed}")

    @property
    def bits_per_code(self) -> int:
        return int(math.log2(self.codebook_size))


@dataclass(frozen=True)
class Codebook:
    """One RVQ stage: unit-norm entries plus the in/out projections."""

    entries: np.ndarray   # (K, code_dim), rows unit L2 norm
    in_proj: np.ndarray   # (code_dim, D), orthonormal rows
    out_proj: np.ndarray  # (D, code_dim)

    def __post_init__(self):
        norms = np.linalg.norm(self.entries, axis=1)
        if not np.all(np.isfinite(self.entries)) or np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidConfig("codebook entries must be finite unit vectors")


@dataclass(frozen=True)
class RvqModel:
    config: RvqConfig
    stages: tuple            # Q Codebooks, in quantization order
    training_stats: np.ndarray = field(repr=False, default=None)  # per-stage MSE

    @property
    def n_stages(self) -> int:
        return len(self.stages)


@dataclass(frozen=True)
class TokenStream:
    """T x q matrix of codeword indices plus the config they came from."""

    frames: np.ndarray
    codebook_size: int
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2:
            raise InvalidInput(f"token frames must be T x q, got shape {frames.shape}")
        if frames.size and (frames.min() < 0 or frames.max() >= self.codebook_size):
            raise CorruptTokens(
                f"token index out of range [0, {self.codebook_size})"
            )
        object.__setattr__(self, "frames", frames.astype(np.uint16))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_stages(self) -> int:
        return self.frames.shape[1]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, _NORM_EPS)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling of k centers from points."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))  # all points coincide with a center
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[i] = points[pick]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def kmeans_unit(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = _LLOYD_MAX_ITER,
    rel_tol: float = _LLOYD_REL_TOL,
):
    """Spherical k-means on (mostly unit-norm) points.

    Centroids are re-normalized after every Lloyd update, which keeps the
    mean squared distance to assigned centroids nonincreasing for unit-norm
    data.  Empty clusters are re-seeded with the point currently farthest
    from its centroid, worst first.

    Returns:
        (centroids, assignments, distortion_history)
    """
    rng = np.random.default_rng(seed)
    centers = _normalize_rows(_kmeans_pp_init(points, k, rng))
    sq_norms = np.sum(points**2, axis=1)
    n, dim = points.shape
    chunk = max(1, (1 << 22) // max(k, 1))  # cap the sims buffer at ~32 MB
    history = []
    prev = None
    assign = np.empty(n, dtype=np.int64)
    best_sim = np.empty(n)
    for _ in range(max_iter):
        centers_t = centers.T.copy()
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            sims = points[start:stop] @ centers_t
            local = np.argmax(sims, axis=1)
            assign[start:stop] = local
            best_sim[start:stop] = sims[np.arange(stop - start), local]
        dists = sq_norms + 1.0 - 2.0 * best_sim
        distortion = float(np.mean(dists))
        history.append(distortion)
        if prev is not None and abs(prev - distortion) <= rel_tol * max(prev, _NORM_EPS):
            break
        prev = distortion

        counts = np.bincount(assign, minlength=k)
        sums = np.column_stack(
            [np.bincount(assign, weights=points[:, j], minlength=k) for j in range(dim)]
        )
        nonempty = counts > 0
        means = sums[nonempty] / counts[nonempty, None]
        # A cluster whose members cancel keeps its previous centroid; a
        # zero-norm centroid would break both the unit-norm invariant and
        # the monotone-distortion argument.
        degenerate = np.linalg.norm(means, axis=1) < _NORM_EPS
        means[degenerate] = centers[nonempty][degenerate]
        centers[nonempty] = _normalize_rows(means)
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            worst = np.argsort(dists)[::-1]
            for slot, point_idx in zip(empty, worst[: empty.size]):
                centers[slot] = _normalize_rows(points[point_idx : point_idx + 1])[0]
    return centers, assign, history


def _fit_projection(residuals: np.ndarray, code_dim: int) -> np.ndarray:
    """Top code_dim principal directions of the (uncentered) residual cloud."""
    second_moment = residuals.T @ residuals / residuals.shape[0]
    second_moment = (second_moment + second_moment.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(second_moment)
    order = np.argsort(eigvals)[::-1][:code_dim]
    basis = eigvecs[:, order].T
    for row in basis:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return basis


def train_rvq(latents, config: RvqConfig) -> RvqModel:
    """Train the stage codebooks by residual k-means.

    Each stage fits its input projection to the current residuals, runs
    seeded k-means++ / Lloyd on the normalized projections, folds the
    least-squares reconstruction gain into the output projection, subtracts
    the quantized values, and records the remaining mean squared error.
    """
    if isinstance(latents, LatentSequence):
        data = latents.frames
    else:
        data = np.asarray(latents, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != config.latent_dim:
        raise InvalidInput(
            f"training latents must be N x {config.latent_dim}, got {data.shape}"
        )
    if not np.all(np.isfinite(data)):
        raise InvalidInput("training latents contain non-finite values")
    if data.shape[0] < 10 * config.codebook_size:
        raise InsufficientData(
            f"need at least {10 * config.codebook_size} training frames, got {data.shape[0]}"
        )

    residual = data.copy()
    stages = []
    stats = []
    for stage_idx in range(config.n_stages):
        in_proj = _fit_projection(residual, config.code_dim)
        projected = residual @ in_proj.T
        normalized = _normalize_rows(projected)
        entries, assign, _ = kmeans_unit(
            normalized, config.codebook_size, seed=config.seed + stage_idx
        )
        # Least-squares gain: the unit entries only carry direction, so the
        # reconstruction scale that minimizes the residual is the mean
        # alignment between residuals and their selected directions.
        directions = entries[assign] @ in_proj  # (N, D), unit rows
        gain = float(np.sum(residual * directions) / max(len(residual), 1))
        out_proj = gain * in_proj.T
        stages.append(Codebook(entries, in_proj, out_proj))
        residual -= entries[assign] @ out_proj.T
        stats.append(float(np.mean(residual**2)))
    return RvqModel(config=config, stages=tuple(stages), training_stats=np.array(stats))


def quantize(model: RvqModel, latents: LatentSequence, n_stages: int) -> TokenStream:
    """Greedy per-stage quantization of a latent sequence.

    Per frame and stage: project the residual, L2-normalize, pick the
    nearest entry (lowest index on ties), subtract its reconstruction, and
    continue with the next stage.
    """
    if not 1 <= n_stages <= model.n_stages:
        raise InvalidInput(
            f"n_stages must be in [1, {model.n_stages}], got {n_stages}"
        )
    if latents.dim != model.config.latent_dim:
        raise InvalidInput(
            f"latents have dimension {latents.dim}, model expects {model.config.latent_dim}"
        )
    residual = latents.frames.copy()
    tokens = np.empty((latents.n_frames, n_stages), dtype=np.uint16)
    for i in range(n_stages):
        stage = model.stages[i]
        normalized = _normalize_rows(residual @ stage.in_proj.T)
        # Unit vectors both sides: nearest by distance == max cosine, and
        # argmax resolves ties toward the lowest index.
        idx = np.argmax(normalized @ stage.entries.T, axis=1)
        tokens[:, i] = idx
        residual -= stage.entries[idx] @ stage.out_proj.T
    return TokenStream(tokens, model.config.codebook_size, model.config.frame_rate)


def dequantize(model: RvqModel, tokens: TokenStream, n_stages: int | None = None) -> LatentSequence:
    """Sum the first n_stages codeword reconstructions per frame."""
    if n_stages is None:
        n_stages = tokens.n_stages
    if not 1 <= n_stages <= tokens.n_stages:
        raise InvalidInput(
            f"n_stages must be in [1, {tokens.n_stages}], got {n_stages}"
        )
    if tokens.n_stages > model.n_stages:
        raise InvalidInput(
            f"stream has {tokens.n_stages} stages but model only {model.n_stages}"
        )
    if tokens.codebook_size != model.config.codebook_size:
        raise CorruptTokens(
            f"stream codebook size {tokens.codebook_size} != model {model.config.codebook_size}"
        )
    if tokens.frames.size and tokens.frames.max() >= model.config.codebook_size:
        raise CorruptTokens("token index out of range for the model codebooks")
    out = np.zeros((tokens.n_frames, model.config.latent_dim))
    for i in range(n_stages):
        stage = model.stages[i]
        out += stage.entries[tokens.frames[:, i]] @ stage.out_proj.T
    return LatentSequence(out, tokens.frame_rate)


def bitrate(config: RvqConfig, n_stages: int) -> int:
    """Bits per second for an n_stages stream: q * log2(K) * frame_rate."""
    if not 1 <= n_stages <= config.n_stages:
        raise InvalidInput(
            f"n_stages must be in [1, {config.n_stages}], got {n_stages}"
        )
    return n_stages * config.bits_per_code * config.frame_rate


def stage_distortions(model: RvqModel, latents: LatentSequence) -> np.ndarray:
    """Mean squared residual after each stage, for all of the model's stages."""
    if latents.dim != model.config.latent_dim:
        raise InvalidInput(
            f"latents have dimension {latents.dim}, model expects {model.config.latent_dim}"
        )
    residual = latents.frames.copy()
    out = np.empty(model.n_stages)
    for i, stage in enumerate(model.stages):
        normalized = _normalize_rows(residual @ stage.in_proj.T)
        idx = np.argmax(normalized @ stage.entries.T, axis=1)
        residual -= stage.entries[idx] @ stage.out_proj.T
        out[i] = float(np.mean(residual**2))
    return out
