"""Prompt branch, residual image branch, classifier head and training loop.

    rho(i)   = SE(psi_n),   psi_k = psi_{k-1} + D(f_k) + D(Conv_k(f_k)),  psi_0 = 0
    delta(i) = channel-zero-padded average pool of the image to (dim, S, S)
    logits   = Head(rho(i) + delta(i))

D is 2x2 average pooling, so S = H_p / 2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .imager import MalImage, resize_lanczos
from .promptvit import EncoderConfig, PromptEncoder, freeze_base
from .tensorcore import SGD, ComputationRecord, ParamRegistry, ShapeMismatch, Tensor, backward

log = logging.getLogger(__name__)


class SingleClassDataset(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    num_classes: int = 2
    se_reduction: int = 4
    head_blocks: int = 2

    def __post_init__(self):
        if self.encoder.dim % self.se_reduction:
            raise ValueError(f"SE reduction {self.se_reduction} does not divide dim {self.encoder.dim}")
        if self.encoder.grid % 2:
            raise ValueError("patch grid must be even for 2x downsampling")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.head_blocks < 1:
            raise ValueError("head needs at least one residual block")

    @property
    def agg_size(self) -> int:
        return self.encoder.grid // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d.get("encoder", {}))
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    float_bits: int = 32
    # stop once an epoch's training accuracy reaches this value
    stop_at_train_acc: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError(f"invalid training configuration {self}")
        if self.float_bits not in (32, 64):
            raise ValueError("float_bits must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.float_bits == 32 else np.float64


def _he(rng: np.random.Generator, fan_in: int, *shape) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)


class PromptClassifier:
    """Frozen prompted encoder + trainable aggregator, SE layer and head in one registry."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        self.registry = ParamRegistry()
        rng = np.random.default_rng(seed)
        self.encoder = PromptEncoder(self.config.encoder, self.registry, seed=int(rng.integers(2**31)), dtype=dtype)
        freeze_base(self.encoder)
        self._init_trainable(rng)

    def _add(self, name, value):
        return self.registry.add(name, value, dtype=self.dtype)

    def _init_trainable(self, rng: np.random.Generator) -> None:
        c = self.config
        d = c.encoder.dim
        for i in range(c.encoder.depth):
            self._add(f"agg.{i}.weight", _he(rng, 9 * d, d, d, 3, 3))
            self._add(f"agg.{i}.bias", np.zeros(d))
        r = d // c.se_reduction
        self._add("se.fc1.weight", _he(rng, d, d, r))
        self._add("se.fc1.bias", np.zeros(r))
        self._add("se.fc2.weight", _he(rng, r, r, d))
        self._add("se.fc2.bias", np.zeros(d))
        w = 2 * d
        for b in range(c.head_blocks):
            cin = d if b == 0 else w
            self._add(f"head.block{b}.conv1.weight", _he(rng, 9 * cin, w, cin, 3, 3))
            self._add(f"head.block{b}.conv1.bias", np.zeros(w))
            # zero-init the residual branch so each block starts as its shortcut
            self._add(f"head.block{b}.conv2.weight", np.zeros((w, w, 3, 3)))
            self._add(f"head.block{b}.conv2.bias", np.zeros(w))
            if b == 0:
                self._add("head.block0.shortcut.weight", _he(rng, cin, w, cin, 1, 1))
        self._add("head.fc.weight", rng.normal(0.0, math.sqrt(1.0 / w), (w, c.num_classes)))
        self._add("head.fc.bias", np.zeros(c.num_classes))

    def p(self, name: str) -> Tensor:
        return self.registry[name]

    def group_names(self, group: str) -> list[str]:
        """Parameter names in one of: base, prompts, agg, se, head."""
        if group == "base":
            return self.encoder.base_names
        if group == "prompts":
            return self.encoder.prompt_names
        return [n for n in self.registry if n.startswith(group + ".")]

    # ------------------------------------------------------------------ branches

    def aggregate(self, taps: Sequence[Tensor]) -> Tensor:
        if not taps:
            raise ShapeMismatch("aggregate needs at least one feature tap")
        if len(taps) > self.config.encoder.depth:
            raise ShapeMismatch(f"{len(taps)} taps but only {self.config.encoder.depth} aggregator sub-modules")
        psi = None
        for i, f in enumerate(taps):
            if f.shape != taps[0].shape:
                raise ShapeMismatch(f"aggregate: tap shapes {taps[0].shape} and {f.shape} differ")
            conv = tc.conv2d(f, self.p(f"agg.{i}.weight"), self.p(f"agg.{i}.bias"), pad=1)
            fi = tc.add(tc.avg_pool2d(f, 2), tc.avg_pool2d(conv, 2))
            psi = fi if psi is None else tc.add(psi, fi)
        return psi

    def se_layer(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.encoder.dim:
            raise ShapeMismatch(f"se_layer expects (N, {self.config.encoder.dim}, S, S), got {x.shape}")
        s = tc.global_avg_pool(x)
        e = tc.relu(tc.linear(s, self.p("se.fc1.weight"), self.p("se.fc1.bias")))
        e = tc.sigmoid(tc.linear(e, self.p("se.fc2.weight"), self.p("se.fc2.bias")))
        return tc.scale_channels(x, e)

    def downsample_pad(self, image) -> Tensor:
        x = self.encoder.as_batch(image)
        s = self.config.agg_size
        k = x.shape[2] // s
        if x.shape[1] > self.config.encoder.dim:
            raise ShapeMismatch(f"{x.shape[1]} image channels exceed dim {self.config.encoder.dim}")
        return tc.pad_channels(tc.avg_pool2d(x, k), self.config.encoder.dim)

    def prompt_branch(self, image) -> Tensor:
        _, taps = self.encoder.encode_with_taps(image)
        return self.se_layer(self.aggregate(taps))

    def head(self, x: Tensor) -> Tensor:
        for b in range(self.config.head_blocks):
            stride = 2 if b == 0 else 1
            # GELU rather than ReLU keeps the head smooth for finite-difference checks
            out = tc.gelu(
                tc.conv2d(x, self.p(f"head.block{b}.conv1.weight"), self.p(f"head.block{b}.conv1.bias"), stride, 1)
            )
            out = tc.conv2d(out, self.p(f"head.block{b}.conv2.weight"), self.p(f"head.block{b}.conv2.bias"), 1, 1)
            short = tc.conv2d(x, self.p("head.block0.shortcut.weight"), stride=2) if b == 0 else x
            x = tc.gelu(tc.add(out, short))
        pooled = tc.global_avg_pool(x)
        return tc.linear(pooled, self.p("head.fc.weight"), self.p("head.fc.bias"))

    def combine_and_classify(self, image) -> Tensor:
        x = self.encoder.as_batch(image)
        rho = self.prompt_branch(x)
        delta = self.downsample_pad(x)
        if rho.shape != delta.shape:
            raise ShapeMismatch(f"branch shapes differ: {rho.shape} vs {delta.shape}")
        return self.head(tc.add(rho, delta))

    __call__ = combine_and_classify

    def loss(self, images, labels) -> Tensor:
        return tc.cross_entropy(self.combine_and_classify(images), labels)

    def predict(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(images), batch_size):
            logits = self.combine_and_classify(images[start : start + batch_size].astype(self.dtype))
            out.append(np.argmax(logits.data, axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    # ------------------------------------------------------------------ persistence

    def state(self) -> dict[str, np.ndarray]:
        return self.registry.state()

    def save(self, path) -> None:
        tc.weights_io.save(path, self.state(), self.registry.frozen)

    def load(self, path) -> None:
        arrays, _ = tc.weights_io.load(path)
        self.registry.load_state(arrays)


# ---------------------------------------------------------------------- data


def image_to_input(image: MalImage | np.ndarray, img_size: int, dtype=np.float32) -> np.ndarray:
    """MalImage (any size) -> (3, img_size, img_size) floats in [0, 1]."""
    if isinstance(image, MalImage):
        pixels = image.pixels
    else:
        pixels = np.asarray(image)
        if pixels.dtype != np.uint8:
            arr = pixels.astype(dtype)
            return arr if arr.ndim == 3 else np.repeat(arr[None], 3, axis=0)
    if pixels.shape[:2] != (img_size, img_size):
        pixels = resize_lanczos(pixels, img_size, img_size)
    arr = pixels.astype(dtype) / np.dtype(dtype).type(255.0)
    if arr.ndim == 2:
        return np.repeat(arr[None], 3, axis=0)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def stack_inputs(images: Sequence, img_size: int, dtype=np.float32) -> np.ndarray:
    return np.stack([image_to_input(im, img_size, dtype) for im in images]) if images else np.zeros(
        (0, 3, img_size, img_size), dtype=dtype
    )


@dataclass
class FitResult:
    losses: list[float]
    train_acc: list[float]

    @property
    def epochs_run(self) -> int:
        return len(self.losses)


def fit(dataset: Sequence[tuple], config: TrainConfig, model: PromptClassifier) -> FitResult:
    """Mini-batch SGD with momentum on cross-entropy; returns per-epoch mean loss and accuracy."""
    labels = np.asarray([label for _, label in dataset], dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise SingleClassDataset("training data must contain at least two classes")
    if labels.max() >= model.config.num_classes or labels.min() < 0:
        raise ValueError(f"labels must lie in [0, {model.config.num_classes})")
    x = stack_inputs([im for im, _ in dataset], model.config.encoder.img_size, model.dtype)
    rng = np.random.default_rng(config.seed)
    opt = SGD(model.registry, config.lr, config.momentum)
    result = FitResult([], [])
    for epoch in range(config.epochs):
        order = rng.permutation(len(labels))
        total, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            with ComputationRecord() as rec:
                logits = model.combine_and_classify(x[idx])
                loss = tc.cross_entropy(logits, labels[idx])
            grads = backward(rec, loss)
            opt.step(grads)
            total += loss.item() * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == labels[idx]).sum())
        result.losses.append(total / len(labels))
        result.train_acc.append(correct / len(labels))
        log.info("epoch %d loss %.5f acc %.4f", epoch + 1, result.losses[-1], result.train_acc[-1])
        if config.stop_at_train_acc is not None and result.train_acc[-1] >= config.stop_at_train_acc:
            break
    return result
