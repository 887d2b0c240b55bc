"""Prompted ViT-style image encoder.

The base network (patch projection, positional embeddings, pre-norm
transformer blocks) is frozen; the only trainable encoder tensor is the
``m x dim`` prompt matrix appended after the patch tokens before block 1.
After every block the patch tokens (never the prompt tokens) are reshaped
into a ``(dim, H_p, W_p)`` feature map and recorded as a tap.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import ParamRegistry, ShapeMismatch, Tensor

BASE_INIT_STD = 0.02
# prompts pass through LayerNorm first; at unit scale its curvature stays mild
PROMPT_INIT_STD = 1.0


@dataclass(frozen=True)
class EncoderConfig:
    img_size: int = 64
    patch_size: int = 8
    depth: int = 4
    dim: int = 32
    heads: int = 4
    prompt_count: int = 4
    mlp_ratio: int = 4
    deep_prompts: bool = False

    def __post_init__(self):
        if self.img_size % self.patch_size:
            raise ValueError(f"img_size {self.img_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.prompt_count < 0 or self.depth < 1:
            raise ValueError("need prompt_count >= 0 and depth >= 1")

    @property
    def grid(self) -> int:
        return self.img_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid**2

    def to_dict(self) -> dict:
        return asdict(self)


class PromptEncoder:
    """Frozen base encoder plus learnable prompt tokens, registered under ``prefix``."""

    def __init__(
        self,
        config: EncoderConfig,
        registry: ParamRegistry | None = None,
        seed: int = 0,
        dtype=np.float32,
        prefix: str = "encoder",
    ):
        self.config = config
        self.registry = registry if registry is not None else ParamRegistry()
        self.prefix = prefix
        self.dtype = np.dtype(dtype)
        self._init(np.random.default_rng(seed))

    def _name(self, *parts) -> str:
        return ".".join([self.prefix, *map(str, parts)])

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        return self.registry.add(name, value, dtype=self.dtype)

    def _init(self, rng: np.random.Generator) -> None:
        c = self.config
        d, p = c.dim, c.patch_size
        hidden = c.mlp_ratio * d

        def gauss(*shape):
            return rng.normal(0.0, BASE_INIT_STD, shape)

        self._base: list[str] = []

        def base(name, value):
            self._add(name, value)
            self._base.append(name)

        base(self._name("patch", "weight"), gauss(d, 3, p, p))
        base(self._name("patch", "bias"), np.zeros(d))
        base(self._name("pos"), gauss(c.n_patches, d))
        for i in range(c.depth):
            blk = ("blocks", i)
            for norm in ("norm1", "norm2"):
                base(self._name(*blk, norm, "gamma"), np.ones(d))
                base(self._name(*blk, norm, "beta"), np.zeros(d))
            for proj in ("q", "k", "v", "out"):
                base(self._name(*blk, "attn", proj, "weight"), gauss(d, d))
                base(self._name(*blk, "attn", proj, "bias"), np.zeros(d))
            base(self._name(*blk, "mlp", "fc1", "weight"), gauss(d, hidden))
            base(self._name(*blk, "mlp", "fc1", "bias"), np.zeros(hidden))
            base(self._name(*blk, "mlp", "fc2", "weight"), gauss(hidden, d))
            base(self._name(*blk, "mlp", "fc2", "bias"), np.zeros(d))

        # prompts come from their own stream so the base weights do not depend on m
        prompt_rng = np.random.default_rng(rng.integers(2**63))
        self._prompts = [self._name("prompts")]
        self._add(self._prompts[0], prompt_rng.normal(0.0, PROMPT_INIT_STD, (c.prompt_count, d)))
        if c.deep_prompts:
            for i in range(1, c.depth):
                name = self._name("prompts", i)
                self._add(name, prompt_rng.normal(0.0, PROMPT_INIT_STD, (c.prompt_count, d)))
                self._prompts.append(name)

    # ------------------------------------------------------------------ names

    @property
    def base_names(self) -> list[str]:
        return list(self._base)

    @property
    def prompt_names(self) -> list[str]:
        return list(self._prompts)

    def p(self, *parts) -> Tensor:
        return self.registry[self._name(*parts)]

    # ------------------------------------------------------------------ forward

    def as_batch(self, image) -> Tensor:
        """Accept (C, H, W) or (N, C, H, W); grayscale is replicated to 3 channels."""
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        if x.ndim == 3:
            x = tc.reshape(x, (1, *x.shape))
        s = self.config.img_size
        if x.ndim != 4 or x.shape[2:] != (s, s) or x.shape[1] not in (1, 3):
            raise ShapeMismatch(f"encoder expects (N, 1|3, {s}, {s}) images, got {x.shape}")
        if x.shape[1] == 1:
            x = tc.concat([x, x, x], axis=1)
        return x

    def patch_embed(self, image) -> Tensor:
        """Image batch -> (N, n_patches, dim) tokens including positional embeddings."""
        x = self.as_batch(image)
        c = self.config
        feat = tc.conv2d(x, self.p("patch", "weight"), self.p("patch", "bias"), stride=c.patch_size)
        n = feat.shape[0]
        tokens = tc.transpose(tc.reshape(feat, (n, c.dim, c.n_patches)), (0, 2, 1))
        return tc.add(tokens, self.p("pos"))

    def inject_prompts(self, tokens: Tensor, prompts: Tensor | None = None) -> Tensor:
        """Append prompt rows after the patch tokens: [patches | prompts]."""
        prompts = prompts if prompts is not None else self.registry[self._prompts[0]]
        if prompts.ndim != 2 or prompts.shape[1] != tokens.shape[-1]:
            raise ShapeMismatch(f"prompts {prompts.shape} do not match token width of {tokens.shape}")
        if prompts.shape[0] == 0:
            return tokens
        return tc.concat([tokens, tc.expand(prompts, tokens.shape[0])], axis=1)

    def block(self, x: Tensor, i: int) -> Tensor:
        """Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x))."""
        blk = ("blocks", i)
        h = tc.layer_norm(x, self.p(*blk, "norm1", "gamma"), self.p(*blk, "norm1", "beta"))
        q, k, v = (tc.linear(h, self.p(*blk, "attn", n, "weight"), self.p(*blk, "attn", n, "bias")) for n in "qkv")
        a = tc.multi_head_attention(q, k, v, self.config.heads)
        a = tc.linear(a, self.p(*blk, "attn", "out", "weight"), self.p(*blk, "attn", "out", "bias"))
        x = tc.add(x, a)
        h = tc.layer_norm(x, self.p(*blk, "norm2", "gamma"), self.p(*blk, "norm2", "beta"))
        h = tc.gelu(tc.linear(h, self.p(*blk, "mlp", "fc1", "weight"), self.p(*blk, "mlp", "fc1", "bias")))
        h = tc.linear(h, self.p(*blk, "mlp", "fc2", "weight"), self.p(*blk, "mlp", "fc2", "bias"))
        return tc.add(x, h)

    def _tap(self, x: Tensor) -> Tensor:
        c = self.config
        n = x.shape[0]
        patches = x if x.shape[1] == c.n_patches else tc.narrow(x, 1, 0, c.n_patches)
        return tc.reshape(tc.transpose(patches, (0, 2, 1)), (n, c.dim, c.grid, c.grid))

    def encode_with_taps(self, image) -> tuple[Tensor, list[Tensor]]:
        """Run every block over [patches | prompts]; return (y, taps).

        ``y`` is the final-block tap, i.e. the image embedding.
        """
        c = self.config
        x = self.inject_prompts(self.patch_embed(image))
        taps = []
        for i in range(c.depth):
            if i > 0 and c.deep_prompts and c.prompt_count:
                # deep variant: swap in this block's own prompt rows
                patches = tc.narrow(x, 1, 0, c.n_patches)
                x = self.inject_prompts(patches, self.registry[self._prompts[i]])
            x = self.block(x, i)
            taps.append(self._tap(x))
        return taps[-1], taps

    def reference_forward(self, image) -> tuple[Tensor, list[Tensor]]:
        """Plain ViT forward without any prompt handling, for comparison with m = 0."""
        x = self.patch_embed(image)
        taps = []
        for i in range(self.config.depth):
            x = self.block(x, i)
            taps.append(self._tap(x))
        return taps[-1], taps


def freeze_base(encoder: PromptEncoder, registry: ParamRegistry | None = None) -> ParamRegistry:
    """Freeze every base encoder tensor; prompts stay trainable. Idempotent."""
    registry = registry if registry is not None else encoder.registry
    registry.freeze(encoder.base_names)
    return registry
