import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psam import tensorcore as tc
from psam.promptmodule import (
    ModelConfig,
    PromptClassifier,
    SingleClassDataset,
    TrainConfig,
    fit,
    image_to_input,
)
from psam.promptvit import EncoderConfig
from psam.tensorcore import ComputationRecord, Tensor, backward

SMALL = ModelConfig(EncoderConfig(img_size=32, depth=2, dim=16, heads=2, prompt_count=2))


def model(config=SMALL, seed=0, dtype=np.float64):
    return PromptClassifier(config, seed=seed, dtype=dtype)


def box(x, k):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))


def conv3x3_same(x, w, b):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, w.shape[0], h, wd))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("nchw,oc->nohw", xp[:, :, dy : dy + h, dx : dx + wd], w[:, :, dy, dx])
    return out + b[None, :, None, None]


def straight_line_psi(taps, kernels):
    psi = np.zeros_like(box(taps[0], 2))
    for f, (w, b) in zip(taps, kernels):
        psi = psi + box(f, 2) + box(conv3x3_same(f, w, b), 2)
    return psi


def kernels_of(m, count):
    return [(m.p(f"agg.{i}.weight").data, m.p(f"agg.{i}.bias").data) for i in range(count)]


# ---------------------------------------------------------------- aggregate


def test_aggregate_zero():
    m = model()
    for i in range(2):
        m.p(f"agg.{i}.weight").data[:] = 0
    taps = [Tensor(np.zeros((1, 16, 4, 4))) for _ in range(2)]
    assert not m.aggregate(taps).data.any()


def test_aggregate_center_kernel_doubles(rng):
    m = model()
    w = np.zeros((16, 16, 3, 3))
    w[np.arange(16), np.arange(16), 1, 1] = 1.0
    m.p("agg.0.weight").data[:] = w
    f = rng.standard_normal((1, 16, 4, 4))
    np.testing.assert_allclose(m.aggregate([Tensor(f)]).data, 2 * box(f, 2), rtol=0, atol=1e-14)


def test_aggregate_two_taps_oracle(rng):
    m = model()
    taps = [rng.standard_normal((2, 16, 4, 4)) for _ in range(2)]
    got = m.aggregate([Tensor(t) for t in taps]).data
    np.testing.assert_allclose(got, straight_line_psi(taps, kernels_of(m, 2)), rtol=0, atol=1e-10)


def test_aggregate_shape_errors(rng):
    m = model()
    with pytest.raises(tc.ShapeMismatch):
        m.aggregate([])
    with pytest.raises(tc.ShapeMismatch):
        m.aggregate([Tensor(np.zeros((1, 16, 4, 4))), Tensor(np.zeros((1, 16, 2, 2)))])


def test_aggregate_permutation_invariance(rng):
    m = model()
    taps = [Tensor(rng.standard_normal((1, 16, 4, 4))) for _ in range(2)]
    a = m.aggregate(taps).data
    w0, w1 = (m.p(f"agg.{i}.weight").data.copy() for i in range(2))
    m.p("agg.0.weight").data[:], m.p("agg.1.weight").data[:] = w1, w0
    b = m.aggregate(taps[::-1]).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- SE layer


def test_se_zero_weights_halves(rng):
    m = model()
    for name in ("se.fc1.weight", "se.fc2.weight"):
        m.p(name).data[:] = 0
    x = rng.standard_normal((2, 16, 2, 2))
    np.testing.assert_array_equal(m.se_layer(Tensor(x)).data, x * 0.5)
    assert not m.se_layer(Tensor(np.zeros((1, 16, 2, 2)))).data.any()


def test_se_formula_oracle(rng):
    m = model()
    x = rng.standard_normal((3, 16, 2, 2))
    s = x.mean(axis=(2, 3))
    h = np.maximum(s @ m.p("se.fc1.weight").data + m.p("se.fc1.bias").data, 0)
    e = 1 / (1 + np.exp(-(h @ m.p("se.fc2.weight").data + m.p("se.fc2.bias").data)))
    np.testing.assert_allclose(m.se_layer(Tensor(x)).data, x * e[:, :, None, None], rtol=1e-13, atol=1e-15)
    with pytest.raises(tc.ShapeMismatch):
        m.se_layer(Tensor(np.zeros((1, 8, 2, 2))))


# ---------------------------------------------------------------- delta branch


def test_downsample_pad_constant():
    m = model()
    out = m.downsample_pad(np.full((3, 32, 32), 0.25)).data
    assert out.shape == (1, 16, 2, 2)
    assert np.all(out[:, :3] == 0.25) and not out[:, 3:].any()


def test_downsample_pad_default_shape_and_oracle(rng):
    m = PromptClassifier(seed=0, dtype=np.float64)
    img = rng.random((3, 64, 64))
    out = m.downsample_pad(img).data
    assert out.shape == (1, 32, 4, 4)
    np.testing.assert_allclose(out[0, :3], box(img[None], 16)[0], rtol=0, atol=1e-15)


def test_downsample_pad_too_many_channels():
    m = model(ModelConfig(EncoderConfig(img_size=32, depth=1, dim=2, heads=1, prompt_count=1), se_reduction=1))
    with pytest.raises(tc.ShapeMismatch):
        m.downsample_pad(np.zeros((3, 32, 32)))


# ---------------------------------------------------------------- composition


def test_prompt_branch_composition(rng):
    m = model()
    img = rng.random((3, 32, 32))
    _, taps = m.encoder.encode_with_taps(img)
    want = m.se_layer(m.aggregate(taps)).data
    got = m.prompt_branch(img).data
    assert got.shape == (1, 16, 2, 2)
    assert got.tobytes() == want.tobytes()
    assert m.downsample_pad(img).shape == got.shape


def test_prompt_branch_zero_parameters():
    m = model()
    for name in m.group_names("base") + m.group_names("prompts"):
        m.p(name).data[:] = 0
    assert not m.prompt_branch(np.zeros((3, 32, 32))).data.any()


def test_logits_shape_and_trainable_groups(rng):
    m = model(ModelConfig(SMALL.encoder, num_classes=3))
    assert m.combine_and_classify(rng.random((2, 3, 32, 32))).shape == (2, 3)
    trainable = set(m.registry.trainable())
    groups = [set(m.group_names(g)) for g in ("prompts", "agg", "se", "head")]
    assert set().union(*groups) == trainable
    assert set(m.group_names("base")) == m.registry.frozen


def test_backward_step_keeps_base(rng):
    m = model()
    base = m.registry.digest(m.group_names("base"))
    with ComputationRecord() as rec:
        loss = m.loss(rng.random((2, 3, 32, 32)), [0, 1])
    grads = backward(rec, loss)
    assert set(grads) == set(m.registry.trainable())
    tc.SGD(m.registry, 0.1).step(grads)
    assert m.registry.digest(m.group_names("base")) == base


def test_small_model_finite_differences(rng):
    m = model()
    x = rng.random((2, 3, 32, 32))
    report = tc.finite_diff_check(lambda: m.loss(x, [0, 1]), dict(m.registry.items()), max_entries=8)
    checked = {k: v for k, v in report.items() if v != tc.SKIPPED}
    assert set(checked) == set(m.registry.trainable())
    assert max(checked.values()) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 10), st.integers(1, 5), st.floats(-50, 50))
def test_uniform_logits_cross_entropy(k, n, value):
    labels = np.arange(n) % k
    loss = tc.cross_entropy(Tensor(np.full((n, k), value)), labels).item()
    assert abs(loss - math.log(k)) < 1e-6


# ---------------------------------------------------------------- training


def toy_dataset(n, seed):
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        label = i % 2
        img = rng.random((3, 32, 32)) * 0.2
        if label:
            img[:, ::4, :] += 0.8
        data.append((img, label))
    return data


def test_fit_lr_zero_leaves_params():
    m = model(dtype=np.float32)
    before = m.registry.digest()
    res = fit(toy_dataset(8, 0), TrainConfig(epochs=3, batch_size=8, lr=0.0), m)
    assert m.registry.digest() == before
    assert res.losses[0] == res.losses[1] == res.losses[2]


def test_fit_deterministic():
    runs = []
    for _ in range(2):
        m = model(seed=4, dtype=np.float32)
        res = fit(toy_dataset(12, 1), TrainConfig(epochs=2, batch_size=4, seed=9), m)
        runs.append((res.losses, m.registry.digest()))
    assert runs[0] == runs[1]


def test_fit_learns_separable_toy():
    m = model(dtype=np.float32)
    res = fit(toy_dataset(32, 2), TrainConfig(epochs=15, batch_size=8, stop_at_train_acc=1.0), m)
    assert res.train_acc[-1] >= 0.95
    assert res.losses[-1] < res.losses[0]


def test_fit_single_class():
    with pytest.raises(SingleClassDataset):
        fit([(np.zeros((3, 32, 32)), 1)] * 4, TrainConfig(epochs=1), model())


def test_image_to_input_resizes_and_scales():
    from psam.imager import convert_pe

    img = convert_pe(b"\xff" * 512)
    arr = image_to_input(img, 64)
    assert arr.shape == (3, 64, 64) and arr.dtype == np.float32
    assert np.all(arr == 1.0)


def test_save_load_roundtrip(tmp_path, rng):
    a = model(seed=1)
    a.save(tmp_path / "w.pswt")
    b = model(seed=2)
    b.load(tmp_path / "w.pswt")
    assert a.registry.digest() == b.registry.digest()
    wrong = model(ModelConfig(SMALL.encoder, num_classes=3))
    with pytest.raises(tc.ShapeMismatch):
        wrong.load(tmp_path / "w.pswt")
