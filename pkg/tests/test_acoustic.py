"""Acoustic model: encoder, speaker injection, variance adaptor, decoder, loss."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from fewvox.acoustic import (
    AcousticConfig,
    AcousticModel,
    TrainingBatch,
    inject_speaker,
    length_regulate,
    sinusoidal_pe,
)
from fewvox.encoders import REP_DIM, SpeakerRep
from fewvox.errors import ValidationError

VOCAB_SIZE = 10


def tiny_config(**kw) -> AcousticConfig:
    base = dict(
        vocab_size=VOCAB_SIZE,
        speakers=("s0", "s1"),
        active_schemes=("lookup",),
        n_mels=8,
        hidden=16,
        enc_layers=1,
        dec_layers=1,
        heads=2,
        ffn_dim=32,
        ffn_kernel=3,
        var_filter=8,
        var_kernel=3,
        dropout=0.0,
        gst_tokens=4,
        gst_heads=2,
    )
    base.update(kw)
    return AcousticConfig(**base)


def tiny_model(seed=0, **kw) -> AcousticModel:
    torch.manual_seed(seed)
    return AcousticModel(tiny_config(**kw))


def toy_batch(model: AcousticModel, rng) -> TrainingBatch:
    c = model.config
    phonemes = torch.tensor([[1, 2, 3], [4, 5, 0]])
    mask = torch.tensor([[True, True, True], [True, True, False]])
    durations = torch.tensor([[2, 1, 3], [1, 2, 0]])
    pitch = torch.tensor([[150.0, 200.0, 180.0], [120.0, 140.0, 0.0]])
    energy = torch.tensor([[1.0, 2.0, 1.5], [0.5, 0.8, 0.0]])
    t = int((durations * mask).sum(dim=1).max())
    mels = torch.zeros(2, t, c.n_mels)
    frame_mask = torch.zeros(2, t, dtype=torch.bool)
    for i in range(2):
        n = int((durations[i] * mask[i]).sum())
        mels[i, :n] = torch.from_numpy(rng.normal(size=(n, c.n_mels)).astype(np.float32))
        frame_mask[i, :n] = True
    return TrainingBatch(phonemes, mask, pitch, energy, durations, mels, frame_mask, ["s0", "s1"])


def test_sinusoidal_pe_oracle():
    pe = sinusoidal_pe(4, 6)
    assert pe.shape == (4, 6)
    assert torch.allclose(pe[0], torch.tensor([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]))
    assert pe[2, 0] == pytest.approx(math.sin(2.0), abs=1e-6)
    assert pe[3, 1] == pytest.approx(math.cos(3.0), abs=1e-6)


def test_length_regulate_oracle():
    x = torch.arange(3, dtype=torch.float32).reshape(1, 3, 1) + 1  # features 1, 2, 3
    out, mask, lengths = length_regulate(x, torch.tensor([[2, 1, 3]]))
    assert lengths.tolist() == [6]
    assert out[0, :, 0].tolist() == [1.0, 1.0, 2.0, 3.0, 3.0, 3.0]
    assert mask.all()


def test_length_regulate_identity():
    x = torch.randn(2, 5, 3)
    out, mask, lengths = length_regulate(x, torch.ones(2, 5, dtype=torch.long))
    assert torch.equal(out, x)
    assert mask.all() and lengths.tolist() == [5, 5]


def test_length_regulate_random_oracle(rng):
    for _ in range(50):
        b = int(rng.integers(1, 4))
        l = int(rng.integers(1, 8))
        x = torch.from_numpy(rng.normal(size=(b, l, 2)))
        durs = torch.from_numpy(rng.integers(0, 5, size=(b, l)))
        if int(durs.sum()) == 0:
            continue
        out, mask, lengths = length_regulate(x, durs)
        for i in range(b):
            expect = np.repeat(x[i].numpy(), durs[i].numpy(), axis=0)
            n = expect.shape[0]
            assert lengths[i].item() == n
            assert np.array_equal(out[i, :n].numpy(), expect)
            assert np.all(out[i, n:].numpy() == 0)
            assert mask[i].sum().item() == n


def test_length_regulate_errors():
    x = torch.randn(1, 2, 3)
    with pytest.raises(ValidationError, match="non-negative"):
        length_regulate(x, torch.tensor([[1, -1]]))
    with pytest.raises(ValidationError, match="no frames"):
        length_regulate(x, torch.tensor([[0, 0]]))


def test_encode_shape_and_reversal():
    model = tiny_model()
    ph = torch.tensor([[1, 2, 3, 4]])
    mask = torch.ones_like(ph, dtype=torch.bool)
    with torch.no_grad():
        h = model.encode(ph, mask)
        rev = model.encode(ph.flip(dims=[1]), mask)
    assert h.shape == (1, 4, model.config.hidden)
    # positional information: reversing the sequence is not just a reordering
    assert not torch.allclose(h.flip(dims=[1]), rev, atol=1e-4)


def test_encode_errors():
    model = tiny_model()
    with pytest.raises(ValidationError, match="vocabulary"):
        model.encode(torch.tensor([[VOCAB_SIZE]]), torch.ones(1, 1, dtype=torch.bool))
    with pytest.raises(ValidationError, match="empty"):
        model.encode(torch.zeros(1, 0, dtype=torch.long), torch.ones(1, 0, dtype=torch.bool))


def test_inject_zero_rep_identity():
    model = tiny_model()
    with torch.no_grad():
        for p in model.projections["lookup"].parameters():
            p.zero_()
    hidden = torch.randn(2, 5, model.config.hidden)
    out = inject_speaker(model, hidden, [SpeakerRep(np.zeros(REP_DIM), "lookup")])
    assert torch.equal(out, hidden)


def test_inject_time_constant_delta(rng):
    model = tiny_model()
    hidden = torch.randn(1, 6, model.config.hidden)
    rep = SpeakerRep(rng.normal(size=REP_DIM), "lookup")
    with torch.no_grad():
        out = inject_speaker(model, hidden, [rep])
    delta = (out - hidden)[0]
    assert torch.abs(delta - delta[0]).max() < 1e-5


def test_inject_combination_sums_independent_deltas(rng):
    model = tiny_model(active_schemes=("vc", "lookup"))
    hidden = torch.randn(1, 4, model.config.hidden)
    rep_vc = SpeakerRep(rng.normal(size=REP_DIM), "vc")
    rep_lk = SpeakerRep(rng.normal(size=REP_DIM), "lookup")
    with torch.no_grad():
        both = inject_speaker(model, hidden, [rep_vc, rep_lk])
        d_vc = inject_speaker(model, hidden, [rep_vc]) - hidden
        d_lk = inject_speaker(model, hidden, [rep_lk]) - hidden
    assert torch.allclose(both, hidden + d_vc + d_lk, atol=1e-5)


def test_inject_errors(rng):
    model = tiny_model()
    hidden = torch.randn(1, 3, model.config.hidden)
    with pytest.raises(ValidationError, match="no projection"):
        inject_speaker(model, hidden, [SpeakerRep(rng.normal(size=REP_DIM), "gst")])
    rep = SpeakerRep(rng.normal(size=REP_DIM), "lookup")
    with pytest.raises(ValidationError, match="duplicate"):
        inject_speaker(model, hidden, [rep, rep])


def test_variance_adapt_teacher_forcing(rng):
    model = tiny_model()
    hidden = torch.randn(1, 3, model.config.hidden)
    mask = torch.ones(1, 3, dtype=torch.bool)
    pitch = torch.randn(1, 3)
    energy = torch.randn(1, 3)
    durs = torch.tensor([[2, 1, 3]])
    expanded, frame_mask, lengths, preds = model.variance_adapt(hidden, mask, (pitch, energy, durs))
    assert expanded.shape[1] == 6 and lengths.tolist() == [6]
    assert frame_mask.all()
    assert set(preds) == {"pitch", "energy", "log_duration"}
    assert preds["pitch"].shape == (1, 3)


def test_variance_adapt_inference_floor():
    model = tiny_model()
    # Force the duration predictor toward exp(...) ~ 0: the floor must hold.
    with torch.no_grad():
        model.duration_predictor.out.weight.zero_()
        model.duration_predictor.out.bias.fill_(-20.0)
    hidden = torch.randn(1, 4, model.config.hidden)
    mask = torch.ones(1, 4, dtype=torch.bool)
    expanded, frame_mask, lengths, _ = model.variance_adapt(hidden, mask, targets=None)
    assert lengths.tolist() == [4]  # every phoneme emits exactly the 1-frame floor
    assert expanded.shape[1] == 4


def test_variance_adapt_duration_rounding():
    model = tiny_model()
    with torch.no_grad():
        model.duration_predictor.out.weight.zero_()
        model.duration_predictor.out.bias.fill_(math.log(3.4))
    hidden = torch.randn(1, 5, model.config.hidden)
    mask = torch.ones(1, 5, dtype=torch.bool)
    _, _, lengths, _ = model.variance_adapt(hidden, mask, targets=None)
    assert lengths.tolist() == [5 * 3]  # round(3.4) == 3 per phoneme


def test_decode_contract(rng):
    model = tiny_model()
    frames = torch.randn(2, 7, model.config.hidden)
    mask = torch.ones(2, 7, dtype=torch.bool)
    with torch.no_grad():
        mel = model.decode(frames, mask)
        again = model.decode(frames, mask)
    assert mel.shape == (2, 7, model.config.n_mels)
    assert torch.isfinite(mel).all()
    assert torch.equal(mel, again)
    with pytest.raises(ValidationError, match="empty"):
        model.decode(torch.zeros(1, 0, model.config.hidden), torch.ones(1, 0, dtype=torch.bool))


def test_loss_zero_at_target(rng):
    model = tiny_model()
    batch = toy_batch(model, rng)
    pmask = batch.phoneme_mask.float()
    preds = {
        "pitch": model.norm_pitch(batch.pitch) * pmask,
        "energy": model.norm_energy(batch.energy) * pmask,
        "log_duration": torch.log(torch.clamp(batch.durations.float(), min=1.0)) * pmask,
    }
    losses = model.loss(batch.mels.clone(), preds, batch)
    for key in ("mel", "pitch", "energy", "duration"):
        assert float(losses[key]) == 0.0
    assert float(losses["total"]) == 0.0


def test_loss_total_is_sum(rng):
    model = tiny_model()
    batch = toy_batch(model, rng)
    with torch.no_grad():
        _, _, losses = model.forward_train(batch)
    parts = sum(float(losses[k]) for k in ("mel", "pitch", "energy", "duration"))
    assert float(losses["total"]) == pytest.approx(parts, rel=1e-6)


def test_loss_shape_mismatch(rng):
    model = tiny_model()
    batch = toy_batch(model, rng)
    preds = {
        "pitch": torch.zeros_like(batch.pitch),
        "energy": torch.zeros_like(batch.energy),
        "log_duration": torch.zeros_like(batch.pitch),
    }
    with pytest.raises(ValidationError, match="shape"):
        model.loss(batch.mels[:, :-1], preds, batch)


def test_loss_padding_invariance(rng):
    model = tiny_model()
    model.set_prosody_stats(150.0, 40.0, 1.0, 0.5)
    batch = toy_batch(model, rng)
    with torch.no_grad():
        _, _, base = model.forward_train(batch)
        padded = TrainingBatch(
            torch.cat([batch.phonemes, torch.zeros(2, 2, dtype=torch.long)], dim=1),
            torch.cat([batch.phoneme_mask, torch.zeros(2, 2, dtype=torch.bool)], dim=1),
            torch.cat([batch.pitch, torch.zeros(2, 2)], dim=1),
            torch.cat([batch.energy, torch.zeros(2, 2)], dim=1),
            torch.cat([batch.durations, torch.zeros(2, 2, dtype=torch.long)], dim=1),
            torch.cat([batch.mels, torch.zeros(2, 3, model.config.n_mels)], dim=1),
            torch.cat([batch.frame_mask, torch.zeros(2, 3, dtype=torch.bool)], dim=1),
            batch.speaker_ids,
        )
        _, _, after = model.forward_train(padded)
    for key in ("mel", "pitch", "energy", "duration", "total"):
        assert abs(float(base[key]) - float(after[key])) < 1e-6


def test_training_batch_validation(rng):
    model = tiny_model()
    batch = toy_batch(model, rng)
    with pytest.raises(ValidationError, match="durations do not sum"):
        TrainingBatch(
            batch.phonemes, batch.phoneme_mask, batch.pitch, batch.energy,
            batch.durations + 1, batch.mels, batch.frame_mask, batch.speaker_ids,
        )
    with pytest.raises(ValidationError, match="shape"):
        TrainingBatch(
            batch.phonemes, batch.phoneme_mask, batch.pitch[:, :-1], batch.energy,
            batch.durations, batch.mels, batch.frame_mask, batch.speaker_ids,
        )


def test_synthesize_contract(rng):
    model = tiny_model()
    rep = SpeakerRep(rng.normal(size=REP_DIM), "lookup")
    mel = model.synthesize([1, 2, 3], [rep])
    again = model.synthesize([1, 2, 3], [rep])
    assert mel.n_mels == model.config.n_mels
    assert np.array_equal(mel.values, again.values)
    # frame count equals the sum of predicted durations
    ph = torch.tensor([[1, 2, 3]])
    mask = torch.ones_like(ph, dtype=torch.bool)
    model.eval()
    with torch.no_grad():
        hidden = model.encode(ph, mask)
        hidden = model.inject(
            hidden, {"lookup": torch.from_numpy(rep.vector.astype(np.float32)).unsqueeze(0)}, mask
        )
        _, _, lengths, _ = model.variance_adapt(hidden, mask, targets=None)
    assert mel.n_frames == int(lengths[0])
    assert mel.n_frames >= 3  # the 1-frame floor


def test_synthesize_scheme_errors(rng):
    model = tiny_model(active_schemes=("vc", "lookup"))
    rep_vc = SpeakerRep(rng.normal(size=REP_DIM), "vc")
    rep_lk = SpeakerRep(rng.normal(size=REP_DIM), "lookup")
    rep_gst = SpeakerRep(rng.normal(size=REP_DIM), "gst")
    with pytest.raises(ValidationError, match="missing representation"):
        model.synthesize([1, 2], [rep_vc])
    with pytest.raises(ValidationError, match="inactive"):
        model.synthesize([1, 2], [rep_vc, rep_lk, rep_gst])
    with pytest.raises(ValidationError, match="duplicate"):
        model.synthesize([1, 2], [rep_vc, rep_vc, rep_lk])


def test_speaker_conditioned_variance(rng):
    model = tiny_model()
    ph = torch.tensor([[1, 2, 3]])
    mask = torch.ones_like(ph, dtype=torch.bool)
    rep = torch.from_numpy(rng.normal(size=(1, REP_DIM)).astype(np.float32))
    rep.requires_grad_(True)
    hidden = model.encode(ph, mask)
    hidden = model.inject(hidden, {"lookup": rep}, mask)
    _, _, _, preds = model.variance_adapt(hidden, mask, targets=None)
    grad = torch.autograd.grad(preds["pitch"].sum(), rep, retain_graph=True)[0]
    assert torch.any(grad != 0)
    grad_d = torch.autograd.grad(preds["log_duration"].sum(), rep)[0]
    assert torch.any(grad_d != 0)


def test_config_validation_and_roundtrip():
    with pytest.raises(ValidationError, match="non-empty"):
        tiny_config(active_schemes=())
    with pytest.raises(ValidationError, match="unknown schemes"):
        tiny_config(active_schemes=("mystery",))
    with pytest.raises(ValidationError, match="speaker list"):
        tiny_config(active_schemes=("lookup",), speakers=())
    with pytest.raises(ValidationError, match="divisible"):
        tiny_config(hidden=15, heads=2)
    cfg = tiny_config(active_schemes=("gst", "dvec"))
    assert AcousticConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.active_schemes == ("dvec", "gst")  # schemes are stored sorted
