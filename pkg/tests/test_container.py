import numpy as np
import pytest

from rvqlab.container import ModelContainer, from_bytes, load, save, to_bytes
from rvqlab.dsp import AudioBuffer
from rvqlab.errors import CorruptModel
from rvqlab.frontend import encode_latent, fit_frontend
from rvqlab.rvq import RvqConfig, train_rvq

from signals import speech_like


@pytest.fixture(scope="module")
def container():
    clips = [AudioBuffer(speech_like(2.0, 24000, 700 + i), 24000) for i in range(6)]
    frontend = fit_frontend(clips, latent_dim=16, seed=4)
    latents = np.vstack([encode_latent(frontend, c).frames for c in clips])
    config = RvqConfig(n_stages=3, codebook_size=32, code_dim=8, latent_dim=16, seed=4)
    rvq_model = train_rvq(latents, config)
    return ModelContainer(
        frontend=frontend,
        rvq=rvq_model,
        metadata={"corpus_hash": "deadbeef", "seed": "4", "created": "2026-08-08T00:00:00Z"},
    )


class TestRoundtrip:
    def test_save_load_encodes_identically(self, container, tmp_path):
        path = tmp_path / "model.rvqm"
        save(container, path)
        back = load(path)
        audio = AudioBuffer(speech_like(0.5, 24000, 900), 24000)
        a = encode_latent(container.frontend, audio).frames
        b = encode_latent(back.frontend, audio).frames
        assert np.array_equal(a, b)
        assert back.metadata == container.metadata
        for sa, sb in zip(container.rvq.stages, back.rvq.stages):
            assert np.array_equal(sa.entries, sb.entries)
            assert np.array_equal(sa.in_proj, sb.in_proj)
            assert np.array_equal(sa.out_proj, sb.out_proj)

    def test_byte_identical_reserialization(self, container):
        data = to_bytes(container)
        assert to_bytes(from_bytes(data)) == data


class TestCorruption:
    def test_truncated_file(self, container, tmp_path):
        data = to_bytes(container)
        for cut in (3, 5, len(data) // 2, len(data) - 1):
            with pytest.raises(CorruptModel):
                from_bytes(data[:cut])

    def test_bad_magic(self, container):
        data = bytearray(to_bytes(container))
        data[:4] = b"NOPE"
        with pytest.raises(CorruptModel, match="magic"):
            from_bytes(bytes(data))

    def test_version_mismatch_names_version(self, container):
        data = bytearray(to_bytes(container))
        data[4:6] = (99).to_bytes(2, "little")
        with pytest.raises(CorruptModel, match="99"):
            from_bytes(bytes(data))

    def test_trailing_garbage(self, container):
        with pytest.raises(CorruptModel):
            from_bytes(to_bytes(container) + b"extra")
