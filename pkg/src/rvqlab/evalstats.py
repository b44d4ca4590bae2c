"""Evaluation orchestration and listening-test statistics.

run_evaluation drives the full codec (encode -> quantize at each stage
count -> dequantize -> decode) over test manifests and aggregates
per-test-set metric means into a grid with stage counts in descending
order.  mushra_summary and wilcoxon_ranksum cover the subjective side:
t-distribution confidence intervals and a rank-sum test that enumerates
the exact null distribution for small groups.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as student_t

from .container import ModelContainer
from .datapipe import ManifestEntry
from .dsp import AudioBuffer, resample
from .errors import EvaluationFailed, InsufficientData, InvalidInput, RvqLabError
from .frontend import decode_latent, encode_latent
from .metrics import MultiScaleConfig, mel_loss, pesq_adapter, snr, stft_loss, stoi
from .rvq import dequantize, quantize
from .wavio import read_wav

_METRIC_ORDER = ("mel", "stft", "pesq", "stoi", "latent_mse", "snr")
_ABSENT = "—"  # em dash renders unconfigured cells


@dataclass(frozen=True)
class MetricReport:
    """Grid of per-test-set metric means: rows (test_set, metric, system),
    columns stage counts in descending order; None marks absent cells."""

    rows: dict
    q_list: tuple
    config: dict
    failures: tuple = ()

    def cell(self, test_set: str, metric: str, system: str, q: int):
        return self.rows[(test_set, metric, system)][q]

    def row_keys(self):
        def order(key):
            test_set, metric, system = key
            rank = _METRIC_ORDER.index(metric) if metric in _METRIC_ORDER else len(_METRIC_ORDER)
            return (test_set, rank, metric, system)

        return sorted(self.rows, key=order)


@dataclass(frozen=True)
class MushraRecord:
    subject: str
    stimulus: str
    system: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 100.0:
            raise InvalidInput(f"MUSHRA score must be in [0, 100], got {self.score}")


@dataclass(frozen=True)
class MushraSummary:
    system: str
    mean: float
    ci_low: float
    ci_high: float
    n: int


@dataclass(frozen=True)
class SignificanceResult:
    system: str
    p_value: float
    significant: bool
    alpha: float
    method: str  # "exact" or "normal-approx"


def run_evaluation(
    container: ModelContainer,
    test_manifests: dict,
    q_list,
    metric_config: MultiScaleConfig | None = None,
    gl_iterations: int = 32,
    pesq_tool: str | None = None,
    system: str = "rvq",
    max_failure_rate: float = 0.01,
    include_snr: bool = False,
) -> MetricReport:
    """Score the codec on every test file at every stage count.

    test_manifests maps a test-set name to its ManifestEntry sequence.
    Decoded audio is passed through float32 before scoring, matching the
    float32 WAV files the CLI decode path emits, so CLI-side metrics
    reproduce these numbers exactly.  Per-file failures are recorded and
    skipped; the run fails only if more than max_failure_rate of files do.
    """
    metric_config = metric_config or MultiScaleConfig()
    q_list = sorted(set(int(q) for q in q_list), reverse=True)
    if not q_list:
        raise InvalidInput("q_list must be nonempty")
    if not test_manifests:
        raise InvalidInput("need at least one test manifest")
    frontend = container.frontend
    model = container.rvq
    if q_list[0] > model.n_stages:
        raise InvalidInput(
            f"q={q_list[0]} exceeds the model's {model.n_stages} stages"
        )

    metric_names = ["mel", "stft", "stoi", "pesq", "latent_mse"]
    if include_snr:
        metric_names.append("snr")

    rows = {}
    failures = []
    total_files = 0
    for set_name in sorted(test_manifests):
        entries = list(test_manifests[set_name])
        sums = {(m, q): 0.0 for m in metric_names for q in q_list}
        counts = {(m, q): 0 for m in metric_names for q in q_list}
        for entry in entries:
            total_files += 1
            try:
                audio = _load_for_eval(entry)
                latents = encode_latent(frontend, audio)
                tokens = quantize(model, latents, q_list[0])
                for q in q_list:
                    recon_latents = dequantize(model, tokens, q)
                    decoded = decode_latent(frontend, recon_latents, gl_iterations)
                    decoded = AudioBuffer(
                        decoded.samples.astype(np.float32).astype(np.float64),
                        decoded.sample_rate,
                    )
                    n = min(len(audio), len(decoded))
                    ref = AudioBuffer(audio.samples[:n], audio.sample_rate)
                    test = AudioBuffer(decoded.samples[:n], decoded.sample_rate)

                    values = {
                        "mel": mel_loss(ref, test, metric_config).value,
                        "stft": stft_loss(ref, test, metric_config).value,
                        "stoi": stoi(ref, test).value,
                        "latent_mse": float(
                            np.mean((latents.frames - recon_latents.frames) ** 2)
                        ),
                    }
                    pesq = pesq_adapter(ref, test, tool_path=pesq_tool)
                    values["pesq"] = pesq.value if pesq is not None else None
                    if include_snr:
                        values["snr"] = snr(ref, test).value
                    for name, value in values.items():
                        if value is not None:
                            sums[(name, q)] += value
                            counts[(name, q)] += 1
            except RvqLabError as exc:
                failures.append((set_name, str(entry.path), f"{type(exc).__name__}: {exc}"))
        for name in metric_names:
            rows[(set_name, name, system)] = {
                q: (sums[(name, q)] / counts[(name, q)] if counts[(name, q)] else None)
                for q in q_list
            }

    if total_files == 0:
        raise InvalidInput("test manifests contain no files")
    if len(failures) / total_files > max_failure_rate:
        raise EvaluationFailed(
            f"{len(failures)}/{total_files} files failed (> {max_failure_rate:.0%}): "
            + "; ".join(f[2] for f in failures[:3])
        )
    config = {
        "system": system,
        "q_list": q_list,
        "gl_iterations": gl_iterations,
        "metric": metric_config.snapshot(),
        "pesq_tool": pesq_tool or "",
    }
    return MetricReport(rows=rows, q_list=tuple(q_list), config=config, failures=tuple(failures))


def _load_for_eval(entry: ManifestEntry) -> AudioBuffer:
    audio = read_wav(entry.path)
    if audio.sample_rate != 24000:
        audio = resample(audio, 24000)
    return audio


# --- MUSHRA ------------------------------------------------------------------


def load_mushra_records(path) -> list[MushraRecord]:
    """Read subject,stimulus,system,score records from delimited text."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[:3] == ["subject", "stimulus", "system"]:
                continue
            if len(parts) != 4:
                raise InvalidInput(f"line {lineno}: expected 4 comma-separated fields")
            try:
                score = float(parts[3])
            except ValueError as exc:
                raise InvalidInput(f"line {lineno}: bad score {parts[3]!r}") from exc
            key = (parts[0], parts[1], parts[2])
            if key in seen:
                raise InvalidInput(f"line {lineno}: duplicate (subject, stimulus, system) {key}")
            seen.add(key)
            records.append(MushraRecord(parts[0], parts[1], parts[2], score))
    return records


def mushra_summary(records) -> list[MushraSummary]:
    """Per-system mean with a two-sided 95% t-distribution interval."""
    by_system = {}
    for record in records:
        by_system.setdefault(record.system, []).append(record.score)
    out = []
    for system in sorted(by_system):
        scores = np.asarray(by_system[system], dtype=np.float64)
        n = len(scores)
        if n < 2:
            raise InsufficientData(f"system {system!r} has {n} score(s); need at least 2")
        mean = float(scores.mean())
        sd = float(scores.std(ddof=1))
        half = float(student_t.ppf(0.975, n - 1) * sd / math.sqrt(n))
        out.append(MushraSummary(system, mean, mean - half, mean + half, n))
    return out


# --- Wilcoxon rank-sum --------------------------------------------------------


def _exact_ranksum_p(ranks2: np.ndarray, n_a: int, w2_obs: int) -> float:
    """Two-sided exact p over all C(n, n_a) rank assignments.

    ranks2 are mid-ranks doubled to integers.  Dynamic program over items:
    count[k][s] = number of size-k subsets with doubled-rank sum s.
    """
    total_sum = int(ranks2.sum())
    counts = np.zeros((n_a + 1, total_sum + 1))
    counts[0, 0] = 1.0
    # k runs descending so each item is counted in at most one subset slot.
    for r in ranks2:
        r = int(r)
        for k in range(n_a, 0, -1):
            counts[k, r:] += counts[k - 1, : total_sum + 1 - r]
    dist = counts[n_a]
    n_subsets = dist.sum()
    lower = dist[: w2_obs + 1].sum() / n_subsets
    upper = dist[w2_obs:].sum() / n_subsets
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_ranksum_p(ranks: np.ndarray, n_a: int, n_b: int, w_obs: float) -> float:
    """Normal approximation with tie correction and continuity correction."""
    n = n_a + n_b
    expectation = n_a * (n + 1) / 2.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1)) if n > 1 else 0.0
    variance = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if variance <= 0:
        return 1.0
    diff = w_obs - expectation
    if diff > 0:
        z = (diff - 0.5) / math.sqrt(variance)
    elif diff < 0:
        z = (diff + 0.5) / math.sqrt(variance)
    else:
        return 1.0
    p = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(abs(z) / math.sqrt(2.0))))
    return float(min(1.0, p))


def wilcoxon_ranksum(
    a, b, alpha: float = 0.05, method: str = "auto", system: str = ""
) -> SignificanceResult:
    """Two-sided Wilcoxon rank-sum test of samples a vs b.

    Ties get mid-ranks.  With method="auto" the null distribution is
    enumerated exactly whenever min(len(a), len(b)) <= 10; larger groups
    use the tie-corrected normal approximation with continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 1 or b.size < 1:
        raise InvalidInput("both groups need at least one observation")
    if method not in ("auto", "exact", "normal-approx"):
        raise InvalidInput(f"unknown method {method!r}")
    combined = np.concatenate([a, b])
    ranks = rankdata(combined, method="average")
    w_obs = float(ranks[: a.size].sum())
    use_exact = method == "exact" or (method == "auto" and min(a.size, b.size) <= 10)
    if use_exact:
        ranks2 = np.round(2.0 * ranks).astype(np.int64)  # mid-ranks doubled: integers
        w2 = int(round(2.0 * w_obs))
        p = _exact_ranksum_p(ranks2, a.size, w2)
        used = "exact"
    else:
        p = _normal_ranksum_p(ranks, a.size, b.size, w_obs)
        used = "normal-approx"
    return SignificanceResult(
        system=system, p_value=p, significant=bool(p < alpha), alpha=alpha, method=used
    )


# --- Rendering ----------------------------------------------------------------


def _format_value(value) -> str:
    if value is None:
        return _ABSENT
    return f"{value:.6g}"


def render_report(report, fmt: str = "markdown") -> str:
    """Deterministic text rendering of a MetricReport or MUSHRA summaries."""
    if fmt not in ("markdown", "csv"):
        raise InvalidInput(f"unknown format {fmt!r}")
    if isinstance(report, MetricReport):
        return _render_metric_report(report, fmt)
    return _render_mushra(report, fmt)


def _render_metric_report(report: MetricReport, fmt: str) -> str:
    headers = ["test_set", "metric", "system"] + [f"q={q}" for q in report.q_list]
    rows = [
        [test_set, metric, system]
        + [_format_value(report.rows[(test_set, metric, system)][q]) for q in report.q_list]
        for test_set, metric, system in report.row_keys()
    ]
    out = io.StringIO()
    if fmt == "csv":
        out.write(",".join(headers) + "\n")
        for row in rows:
            out.write(",".join(row) + "\n")
        out.write("# config: " + json.dumps(report.config, sort_keys=True) + "\n")
    else:
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
        out.write("| " + " | ".join(h.ljust(w) for h, w in zip(headers, widths)) + " |\n")
        out.write("|" + "|".join("-" * (w + 2) for w in widths) + "|\n")
        for row in rows:
            out.write("| " + " | ".join(v.ljust(w) for v, w in zip(row, widths)) + " |\n")
        out.write("\nconfig: " + json.dumps(report.config, sort_keys=True) + "\n")
    return out.getvalue()


def _render_mushra(payload, fmt: str) -> str:
    summaries, results = payload if isinstance(payload, tuple) else (payload, [])
    headers = ["system", "mean", "ci_low", "ci_high", "n", "p_vs_reference", "significant", "method"]
    p_by_system = {r.system: r for r in results}
    rows = []
    for summary in summaries:
        result = p_by_system.get(summary.system)
        rows.append(
            [
                summary.system,
                f"{summary.mean:.6g}",
                f"{summary.ci_low:.6g}",
                f"{summary.ci_high:.6g}",
                str(summary.n),
                f"{result.p_value:.6g}" if result else _ABSENT,
                ("yes" if result.significant else "no") if result else _ABSENT,
                result.method if result else _ABSENT,
            ]
        )
    out = io.StringIO()
    if fmt == "csv":
        out.write(",".join(headers) + "\n")
        for row in rows:
            out.write(",".join(row) + "\n")
    else:
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
        out.write("| " + " | ".join(h.ljust(w) for h, w in zip(headers, widths)) + " |\n")
        out.write("|" + "|".join("-" * (w + 2) for w in widths) + "|\n")
        for row in rows:
            out.write("| " + " | ".join(v.ljust(w) for v, w in zip(row, widths)) + " |\n")
    return out.getvalue()
