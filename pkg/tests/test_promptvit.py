import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psam import tensorcore as tc
from psam.promptvit import EncoderConfig, PromptEncoder, freeze_base
from psam.tensorcore import ComputationRecord, Tensor, backward


def encoder(m=4, dtype=np.float64, seed=0, **kw):
    enc = PromptEncoder(EncoderConfig(prompt_count=m, **kw), seed=seed, dtype=dtype)
    freeze_base(enc)
    return enc


def image(seed=0, c=3, size=64):
    return np.random.default_rng(seed).random((c, size, size))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(img_size=60)
    with pytest.raises(ValueError):
        EncoderConfig(dim=30)
    with pytest.raises(ValueError):
        EncoderConfig(prompt_count=-1)


def test_patch_embed_shape_and_grayscale():
    enc = encoder()
    assert enc.patch_embed(image()).shape == (1, 64, 32)
    gray = image(c=1)
    np.testing.assert_array_equal(enc.patch_embed(gray).data, enc.patch_embed(np.repeat(gray, 3, axis=0)).data)
    with pytest.raises(tc.ShapeMismatch):
        enc.patch_embed(image(size=32))


def test_patch_embed_zero_image_zero_pos():
    enc = encoder()
    enc.p("pos").data[:] = 0
    assert not enc.patch_embed(np.zeros((3, 64, 64))).data.any()


def test_patch_embed_dense_oracle():
    enc = encoder()
    ramp = (np.arange(3 * 64 * 64) % 251 / 250.0).reshape(3, 64, 64)
    w = enc.p("patch", "weight").data.reshape(32, -1)
    b = enc.p("patch", "bias").data
    pos = enc.p("pos").data
    want = np.empty((64, 32))
    for r in range(8):
        for c in range(8):
            patch = ramp[:, 8 * r : 8 * r + 8, 8 * c : 8 * c + 8].reshape(-1)
            want[8 * r + c] = w @ patch + b + pos[8 * r + c]
    np.testing.assert_allclose(enc.patch_embed(ramp).data[0], want, rtol=0, atol=1e-12)


def test_inject_prompts_layout():
    enc = encoder(m=4)
    tokens = enc.patch_embed(image())
    seq = enc.inject_prompts(tokens)
    assert seq.shape == (1, 68, 32)
    np.testing.assert_array_equal(seq.data[0, :64], tokens.data[0])
    np.testing.assert_array_equal(seq.data[0, 64:68], enc.p("prompts").data)
    with pytest.raises(tc.ShapeMismatch):
        enc.inject_prompts(tokens, Tensor(np.zeros((4, 16))))


def test_inject_zero_prompts_is_identity():
    enc = encoder(m=0)
    tokens = enc.patch_embed(image())
    assert enc.inject_prompts(tokens) is tokens


def test_encode_shapes():
    enc = encoder(dtype=np.float32)
    y, taps = enc.encode_with_taps(image())
    assert y.shape == (1, 32, 8, 8)
    assert len(taps) == 4
    assert all(t.shape == (1, 32, 8, 8) for t in taps)
    assert y is taps[-1]


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3), st.integers(0, 100))
def test_tap_count_equals_depth(depth, m, seed):
    enc = encoder(m=m, depth=depth, img_size=16, seed=seed)
    assert len(enc.encode_with_taps(image(seed, size=16))[1]) == depth


def test_zero_prompts_bit_identical_to_reference():
    enc = encoder(m=0)
    img = image(3)
    y, taps = enc.encode_with_taps(img)
    y_ref, taps_ref = enc.reference_forward(img)
    assert y.data.tobytes() == y_ref.data.tobytes()
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(taps, taps_ref))


def test_prompts_influence_taps():
    with_prompts = encoder(m=4, seed=5)
    without = encoder(m=0, seed=5)
    assert with_prompts.registry.digest(with_prompts.base_names) == without.registry.digest(without.base_names)
    img = image(1)
    a = with_prompts.encode_with_taps(img)[1]
    b = without.encode_with_taps(img)[1]
    assert not np.allclose(a[0].data, b[0].data)


def test_positional_embedding_length():
    enc = encoder(m=4)
    assert enc.p("pos").shape == (64, 32)


def test_grads_reach_prompts_only():
    enc = encoder()
    with ComputationRecord() as rec:
        y, taps = enc.encode_with_taps(image())
        loss = tc.add(tc.mean_all(tc.mul(y, y)), tc.mean_all(taps[0]))
    grads = backward(rec, loss)
    assert set(grads) == {"encoder.prompts"}
    assert np.abs(grads["encoder.prompts"]).max() > 0


def test_prompt_gradient_finite_differences():
    enc = encoder(img_size=32, depth=2)
    img = image(2, size=32)
    r = np.random.default_rng(9).standard_normal((1, 32, 4, 4))

    def f():
        y, _ = enc.encode_with_taps(img)
        return tc.sum_all(tc.mul(y, Tensor(r)))

    params = {"encoder.prompts": enc.p("prompts")}
    assert enc.p("prompts").data.size == 128
    report = tc.finite_diff_check(f, params, h=1e-4)
    assert report["encoder.prompts"] < 1e-4


def test_freeze_base_contract():
    enc = PromptEncoder(EncoderConfig(), seed=0)
    reg = freeze_base(enc)
    assert set(enc.base_names) == reg.frozen
    assert "encoder.prompts" not in reg.frozen
    assert {"encoder.patch.weight", "encoder.pos", "encoder.blocks.3.attn.q.weight"} <= reg.frozen
    before = set(reg.frozen)
    freeze_base(enc)
    assert reg.frozen == before
    assert list(reg.trainable()) == ["encoder.prompts"]


def test_freeze_unknown_name():
    enc = PromptEncoder(EncoderConfig(), seed=0)
    enc._base.append("encoder.missing")
    with pytest.raises(tc.UnknownParameter):
        freeze_base(enc)


def test_optimizer_step_leaves_base_untouched():
    enc = encoder(dtype=np.float32)
    reg = enc.registry
    base_digest = reg.digest(enc.base_names)
    prompt_before = enc.p("prompts").data.copy()
    opt = tc.SGD(reg, lr=0.5)
    with ComputationRecord() as rec:
        y, _ = enc.encode_with_taps(image())
        loss = tc.mean_all(tc.mul(y, y))
    grads = backward(rec, loss)
    grads.update({name: np.ones_like(reg[name].data) for name in enc.base_names})
    opt.step(grads)
    assert reg.digest(enc.base_names) == base_digest
    assert not np.array_equal(enc.p("prompts").data, prompt_before)


def test_deep_prompts_flag():
    enc = encoder(m=2, deep_prompts=True)
    assert enc.prompt_names == ["encoder.prompts", "encoder.prompts.1", "encoder.prompts.2", "encoder.prompts.3"]
    with ComputationRecord() as rec:
        y, _ = enc.encode_with_taps(image())
        loss = tc.mean_all(tc.mul(y, y))
    assert set(backward(rec, loss)) == set(enc.prompt_names)


def test_seeded_init_deterministic():
    a = PromptEncoder(EncoderConfig(), seed=3)
    b = PromptEncoder(EncoderConfig(), seed=3)
    assert a.registry.digest() == b.registry.digest()
    assert dataclasses.asdict(a.config) == a.config.to_dict()
