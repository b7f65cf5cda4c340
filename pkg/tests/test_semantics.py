import numpy as np
import pytest

from diffsoundstream.audio import Waveform, synth_dataset
from diffsoundstream.semantics import (
    FileFeatureProvider,
    LogMelProvider,
    fit_semantic_codebook,
    pool_features,
    read_features,
    semantic_tokenize,
    write_features,
)
from diffsoundstream.tokens import token_frames


def test_pooling_matches_explicit_windows(rng):
    x = rng.standard_normal((20, 3))
    out = pool_features(x)
    assert out.shape == (5, 3)
    # 20 frames need (5-1)*4+8-20 = 4 pad frames, split 2 left / 2 right
    padded = np.concatenate([x[:1], x[:1], x, x[-1:], x[-1:]])
    for i in range(5):
        np.testing.assert_allclose(out[i], padded[4 * i : 4 * i + 8].mean(0))


def test_pooled_rate_matches_token_rate():
    provider = LogMelProvider()
    for seconds in (1.0, 2.3, 0.5):
        w = Waveform(np.random.default_rng(0).standard_normal(int(24000 * seconds)) * 0.1)
        assert len(pool_features(provider.features(w))) == token_frames(len(w))


def test_tokenize_with_fitted_codebook():
    waves = synth_dataset(0, 3, 1.0)
    provider = LogMelProvider()
    cb = fit_semantic_codebook(waves, provider, k=8)
    sem = semantic_tokenize(waves[0], provider, cb)
    assert len(sem) == 13 and sem.ids.max() < 8
    with pytest.raises(ValueError):
        semantic_tokenize(waves[0], LogMelProvider(n_mels=32), cb)


def test_file_provider(tmp_path, rng):
    w = Waveform(np.zeros(24000), name="clip")
    feats = rng.standard_normal((49, 16)).astype(np.float32)
    write_features(tmp_path / "clip.dsft", feats)
    np.testing.assert_array_equal(read_features(tmp_path / "clip.dsft"), feats)
    provider = FileFeatureProvider(tmp_path)
    assert provider.dim == 16
    assert provider.features(w).shape == (50, 16)  # one short frame is edge-padded
    write_features(tmp_path / "clip.dsft", feats[:40])
    with pytest.raises(ValueError):
        provider.features(w)
    with pytest.raises(ValueError):
        provider.features(Waveform(np.zeros(10)))
