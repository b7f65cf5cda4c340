import numpy as np
import pytest
import torch

from conftest import fd_relative_error
from diffsoundstream.audio import Waveform, synth_dataset
from diffsoundstream.codec.api import ss_cl_decode, ss_cl_encode, ss_sc_decode, ss_sc_tokenize
from diffsoundstream.codec.layers import ConditionAligner, FiLM
from diffsoundstream.codec.losses import MultiScaleStftDiscriminator
from diffsoundstream.codec.models import (
    LatentStats,
    SsCl,
    SsClConfig,
    SsSc,
    SsScConfig,
    latent_denormalize,
    latent_normalize,
    match_frames,
)
from diffsoundstream.codec.train import GanConfig, GanTrainer
from diffsoundstream.tokens import SemanticTokenSeq

SMALL_SC = SsScConfig(base_channels=4, codebook_size=16, film_embed_dim=8, semantic_vocab=16, latent_dim=8)
SMALL_CL = SsClConfig(base_channels=4)


def test_hops():
    assert SsScConfig().hop == 1920 and SsClConfig().hop == 480


def test_ss_sc_shapes_and_rate():
    torch.manual_seed(0)
    model = SsSc(SMALL_SC)
    wave = Waveform(np.random.default_rng(0).standard_normal(1920 * 3 + 5) * 0.1)
    sem = SemanticTokenSeq(np.arange(4) % 16, vocab_size=16)
    model.train()
    model(torch.as_tensor(wave.samples)[None], torch.as_tensor(sem.ids)[None])  # initialize codebooks
    ac = ss_sc_tokenize(model, wave, sem, depth=5)
    assert ac.ids.shape == (4, 5)
    assert len(ss_sc_decode(model, ac, sem)) == 4 * 1920


def test_ss_sc_requires_semantic_tokens():
    model = SsSc(SMALL_SC)
    with pytest.raises(ValueError):
        model.encode(torch.zeros(1, 1920), None)


def test_match_frames_slack():
    ids = torch.arange(5)[None]
    assert match_frames(ids, 4).tolist() == [[0, 1, 2, 3]]
    assert match_frames(ids, 6).tolist() == [[0, 1, 2, 3, 4, 4]]
    with pytest.raises(ValueError):
        match_frames(ids, 7)


def test_ss_cl_shapes_and_clip():
    torch.manual_seed(0)
    model = SsCl(SMALL_CL)
    with torch.no_grad():
        model.encoder.head.weight.mul_(100.0)  # force saturation
    wave = Waveform(np.random.default_rng(1).standard_normal(4800) * 0.5)
    lat = ss_cl_encode(model, wave)
    assert lat.shape == (10, 24)
    assert lat.min() >= -1.0 and lat.max() <= 1.0 and np.abs(lat).max() == 1.0
    assert len(ss_cl_decode(model, lat)) == 4800


def test_ss_cl_training_noise():
    torch.manual_seed(0)
    model = SsCl(SMALL_CL)
    wave = torch.randn(2, 4800) * 0.1
    clean = model.encode(wave)
    noisy = [model.encode(wave, training=True, gen=torch.Generator().manual_seed(s)) for s in range(40)]
    changed = sum(not torch.allclose(n, clean) for n in noisy)
    assert 10 <= changed <= 30  # noise on about half the draws
    assert torch.allclose(model.encode(wave), clean)  # inference is deterministic


def test_latent_stats_round_trip(rng):
    lat = rng.standard_normal((30, 24)) * 3 + 1
    stats = LatentStats.from_latents([lat[:10], lat[10:]])
    z = latent_normalize(lat, stats)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(0), 1, atol=1e-12)
    np.testing.assert_allclose(latent_denormalize(z, stats), lat)
    assert LatentStats.from_dict(stats.to_dict()).std.tolist() == stats.std.tolist()
    with pytest.raises(ValueError, match="degenerate"):
        LatentStats.from_latents([np.ones((5, 24))])


def test_film_identity_at_init():
    film = FiLM(5, 7)
    x = torch.randn(2, 7, 11)
    assert torch.equal(film(x, torch.randn(2, 5, 11)), x)
    with pytest.raises(ValueError):
        film(x, torch.randn(2, 5, 10))


def test_aligner_crops_and_extends():
    al = ConditionAligner(10, 4, 3, factor=5)
    ids = torch.randint(0, 10, (2, 3))
    assert al(ids, 15).shape == (2, 3, 15)
    assert al(ids, 13).shape == (2, 3, 13)
    out = al(ids, 17)
    assert torch.equal(out[..., 15], out[..., 14]) and torch.equal(out[..., 16], out[..., 14])


def test_film_gradcheck():
    torch.manual_seed(0)
    film = FiLM(3, 4).double()
    for p in film.parameters():
        torch.nn.init.normal_(p)
    x = torch.randn(2, 4, 6, dtype=torch.float64, requires_grad=True)
    c = torch.randn(2, 3, 6, dtype=torch.float64, requires_grad=True)
    assert fd_relative_error(lambda: film(x, c), [x, c, *film.parameters()]) < 1e-4


def test_aligner_gradcheck():
    torch.manual_seed(0)
    al = ConditionAligner(6, 3, 4, factor=4).double()
    ids = torch.randint(0, 6, (2, 3))
    assert fd_relative_error(lambda: al(ids, 11), list(al.parameters())) < 1e-4


def test_reconstruction_overfits_one_clip():
    torch.manual_seed(0)
    wave = torch.as_tensor(synth_dataset(0, 1, 0.32)[0].samples)[None]
    model = SsCl(SsClConfig(base_channels=8))
    trainer = GanTrainer(model, MultiScaleStftDiscriminator(channels=4), GanConfig(lr=1e-3, adv_weight=0, feat_weight=0))
    gen = torch.Generator().manual_seed(0)
    rec = [trainer.step(wave, None, gen)["rec"] for _ in range(200)]
    assert np.mean(rec[-10:]) < 0.5 * np.mean(rec[:10])
