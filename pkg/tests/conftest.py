import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rvqlab.datapipe import QualityCategory  # noqa: E402
from rvqlab.dsp import AudioBuffer  # noqa: E402
from rvqlab.wavio import write_wav  # noqa: E402

from signals import speech_like  # noqa: E402


def make_corpus(root, per_category=2, duration=2.0, base_seed=0, name="manifest.jsonl", rates=(24000,)):
    """Write a small balanced speech-like corpus and its JSONL manifest."""
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    seed = base_seed
    for category in QualityCategory:
        for j in range(per_category):
            sr = rates[(seed + j) % len(rates)]
            fname = f"{category.value.lower()}_{j}.wav"
            x = speech_like(duration, sr, seed)
            write_wav(root / fname, AudioBuffer(x, sr))
            lines.append(
                json.dumps(
                    {
                        "path": fname,
                        "category": category.value,
                        "duration": len(x) / sr,
                        "sample_rate": sr,
                    }
                )
            )
            seed += 7
    manifest = root / name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_corpus")
    return make_corpus(root, per_category=2, duration=2.0, base_seed=11)


@pytest.fixture(scope="session")
def toy_model(tmp_path_factory, toy_corpus):
    """A small trained container on disk, shared by CLI and eval tests."""
    from rvqlab import container
    from rvqlab.datapipe import load_manifest
    from rvqlab.training import train_codec

    manifest = load_manifest(toy_corpus)
    model, summary = train_codec(
        manifest,
        n_stages=4,
        codebook_size=16,
        latent_dim=16,
        code_dim=8,
        seed=5,
        n_batches=6,
        batch_size=12,
    )
    path = tmp_path_factory.mktemp("toy_model") / "model.rvqm"
    container.save(model, path)
    return path, model, summary
