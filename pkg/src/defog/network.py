"""Encoder-decoder generator and convolutional discriminator.

The generator maps a fogged observation stack to a full-state prediction.
Its decoder mirrors the encoder, and three additive connections keep the
observed evidence flowing past the bottleneck: each decoder stage adds the
matching encoder activation, and the head adds the observation prior before
the final rectification.  With the head at its zero initialisation the
network therefore starts out predicting exactly the prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .kernel import (
    ParamStore,
    Tensor,
    batchnorm,
    conv2d,
    dense,
    dropout,
    he_uniform,
    leaky_relu,
    relu,
    sigmoid,
    tconv2d,
)
from .schema import ChannelSchema

__all__ = [
    "GeneratorSpec",
    "DiscriminatorSpec",
    "Generator",
    "Discriminator",
]

# Resampling stages use a 4x4 kernel at stride 2 so that conv and tconv
# mirror each other exactly at even extents (16 <-> 8 needs no output pad).
STAGE_KERNEL = 4
STAGE_STRIDE = 2
STAGE_PAD = 1


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape hyperparameters for the generator."""

    in_channels: int
    out_channels: int
    base: int = 64
    stages: int = 3
    head_kernel: int = 3

    def __post_init__(self) -> None:
        _require(self.in_channels > 0, "in_channels must be positive")
        _require(self.out_channels > 0, "out_channels must be positive")
        _require(self.base > 0, "base must be positive")
        _require(self.stages >= 1, "need at least one stage")
        _require(self.head_kernel % 2 == 1, "head kernel must be odd")

    def stage_widths(self) -> list[int]:
        """Channel count after each encoder stage, narrowest first."""
        return [self.base * (1 << i) for i in range(self.stages)]

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "base": self.base,
            "stages": self.stages,
            "head_kernel": self.head_kernel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"bad generator spec: {exc}") from exc


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Shape hyperparameters for the discriminator."""

    in_channels: int
    grid_size: int = 32
    base: int = 64
    stages: int = 3
    slope: float = 0.2
    drop_rate: float = 0.3

    def __post_init__(self) -> None:
        _require(self.in_channels > 0, "in_channels must be positive")
        _require(self.base > 0, "base must be positive")
        _require(self.stages >= 1, "need at least one stage")
        _require(0.0 < self.slope < 1.0, "slope must lie in (0, 1)")
        _require(0.0 <= self.drop_rate < 1.0, "drop rate must lie in [0, 1)")
        down = 1 << self.stages
        _require(self.grid_size % down == 0 and self.grid_size >= down,
                 f"grid {self.grid_size} not divisible by 2^{self.stages}")

    def stage_widths(self) -> list[int]:
        return [self.base * (1 << i) for i in range(self.stages)]

    def dense_width(self) -> int:
        side = self.grid_size >> self.stages
        return self.stage_widths()[-1] * side * side

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "grid_size": self.grid_size,
            "base": self.base,
            "stages": self.stages,
            "slope": self.slope,
            "drop_rate": self.drop_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"bad discriminator spec: {exc}") from exc


def _add_bn(store: ParamStore, prefix: str, width: int) -> None:
    store.add_param(f"{prefix}.gamma", np.ones(width, dtype=np.float32))
    store.add_param(f"{prefix}.beta", np.zeros(width, dtype=np.float32))
    store.add_buffer(f"{prefix}.mean", np.zeros(width, dtype=np.float32))
    store.add_buffer(f"{prefix}.var", np.ones(width, dtype=np.float32))
    store.add_buffer(f"{prefix}.count", np.zeros((), dtype=np.float32))


def _prior_matrix(schema: ChannelSchema) -> np.ndarray:
    """1x1 kernel with 0/1 weights that copies the observation prior.

    Row i of the output selects exactly one input channel, so the copy is
    exact in float arithmetic and the prior stays differentiable.
    """
    sel = np.zeros((schema.c_truth, schema.c_input, 1, 1), dtype=np.float32)
    for i in range(schema.n_friendly):
        sel[i, i, 0, 0] = 1.0
    for j in range(schema.n_enemy):
        sel[schema.n_friendly + j, schema.c_partial + j, 0, 0] = 1.0
    return sel


def _bn(store: ParamStore, prefix: str, x: Tensor, mode: str) -> Tensor:
    return batchnorm(
        x,
        store.params[f"{prefix}.gamma"],
        store.params[f"{prefix}.beta"],
        store.buffers[f"{prefix}.mean"],
        store.buffers[f"{prefix}.var"],
        store.buffers[f"{prefix}.count"],
        mode=mode,
    )


class Generator:
    """Fog-to-state generator over a parameter store."""

    def __init__(self, spec: GeneratorSpec, schema: ChannelSchema,
                 store: ParamStore) -> None:
        _require(spec.in_channels == schema.c_input,
                 f"spec expects {spec.in_channels} input channels but the "
                 f"schema produces {schema.c_input}")
        _require(spec.out_channels == schema.c_truth,
                 f"spec expects {spec.out_channels} output channels but the "
                 f"schema produces {schema.c_truth}")
        self.spec = spec
        self.schema = schema
        self.store = store
        self._prior_w = Tensor(_prior_matrix(schema))

    @classmethod
    def build(cls, spec: GeneratorSpec, schema: ChannelSchema,
              rng: np.random.Generator) -> "Generator":
        store = ParamStore()
        k = STAGE_KERNEL
        widths = spec.stage_widths()
        c_in = spec.in_channels
        # stage convs are bias-free: the batchnorm right behind each one
        # would cancel any bias, leaving a dead parameter
        for i, w in enumerate(widths, start=1):
            fan = c_in * k * k
            store.add_param(f"enc{i}.w", he_uniform(rng, (w, c_in, k, k), fan))
            _add_bn(store, f"enc{i}.bn", w)
            c_in = w
        for i in range(spec.stages, 0, -1):
            c_out = widths[i - 2] if i >= 2 else spec.in_channels
            # each tconv output at stride 2 collects k*k/4 taps per input channel
            fan = c_in * (k // STAGE_STRIDE) ** 2
            store.add_param(f"dec{i}.w", he_uniform(rng, (c_in, c_out, k, k), fan))
            _add_bn(store, f"dec{i}.bn", c_out)
            c_in = c_out
        hk = spec.head_kernel
        # zero head: the first forward pass reproduces the observation prior
        store.add_param(
            "head.w",
            np.zeros((spec.out_channels, spec.in_channels, hk, hk), dtype=np.float32),
        )
        store.add_param("head.b", np.zeros(spec.out_channels, dtype=np.float32))
        return cls(spec, schema, store)

    def forward(self, x: Tensor, mode: str = "train",
                use_observation: bool = True) -> Tensor:
        """Predict the full state for a batch of fogged inputs.

        A single 3-d frame is treated as a batch of one and returned as
        a 3-d frame.  use_observation=False severs both the prior addition
        and the encoder-decoder additions, leaving a plain encoder-decoder.
        """
        if x.data.ndim == 3:
            out = self.forward(x.reshape((1,) + x.shape), mode, use_observation)
            return out.reshape(out.shape[1:])
        _require(x.data.ndim == 4,
                 f"expected a 3-d frame or 4-d batch, got shape {x.shape}")
        n, c, h, wdt = x.shape
        _require(c == self.spec.in_channels,
                 f"input has {c} channels but the generator expects "
                 f"{self.spec.in_channels}")
        down = 1 << self.spec.stages
        _require(h % down == 0 and wdt % down == 0 and h >= down and wdt >= down,
                 f"grid {h}x{wdt} is not divisible by 2^{self.spec.stages}")
        store = self.store
        skips = []
        cur = x
        for i in range(1, self.spec.stages + 1):
            skips.append(cur)
            cur = conv2d(cur, store.params[f"enc{i}.w"], None,
                         stride=STAGE_STRIDE, pad=STAGE_PAD)
            cur = relu(_bn(store, f"enc{i}.bn", cur, mode))
        for i in range(self.spec.stages, 0, -1):
            cur = tconv2d(cur, store.params[f"dec{i}.w"], None,
                          stride=STAGE_STRIDE, pad=STAGE_PAD)
            cur = relu(_bn(store, f"dec{i}.bn", cur, mode))
            if use_observation:
                cur = cur + skips[i - 1]
        head = conv2d(cur, store.params["head.w"], store.params["head.b"],
                      stride=1, pad=self.spec.head_kernel // 2)
        if use_observation:
            head = head + conv2d(x, self._prior_w, None)
        return relu(head)

    def n_parameters(self) -> int:
        return self.store.n_parameters()


class Discriminator:
    """Real-versus-generated state critic."""

    def __init__(self, spec: DiscriminatorSpec, store: ParamStore) -> None:
        self.spec = spec
        self.store = store

    @classmethod
    def build(cls, spec: DiscriminatorSpec,
              rng: np.random.Generator) -> "Discriminator":
        store = ParamStore()
        k = STAGE_KERNEL
        c_in = spec.in_channels
        for i, w in enumerate(spec.stage_widths(), start=1):
            fan = c_in * k * k
            store.add_param(f"conv{i}.w", he_uniform(rng, (w, c_in, k, k), fan))
            store.add_param(f"conv{i}.b", np.zeros(w, dtype=np.float32))
            c_in = w
        d = spec.dense_width()
        store.add_param("out.w", he_uniform(rng, (d, 1), d))
        store.add_param("out.b", np.zeros(1, dtype=np.float32))
        return cls(spec, store)

    def forward(self, y: Tensor, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        """Score a batch of states; returns one probability per frame."""
        if y.data.ndim == 3:
            return self.forward(y.reshape((1,) + y.shape), mode, rng)
        _require(y.data.ndim == 4,
                 f"expected a 3-d frame or 4-d batch, got shape {y.shape}")
        n, c, h, wdt = y.shape
        _require(c == self.spec.in_channels,
                 f"input has {c} channels but the discriminator expects "
                 f"{self.spec.in_channels}")
        _require(h == self.spec.grid_size and wdt == self.spec.grid_size,
                 f"input grid {h}x{wdt} does not match the configured grid "
                 f"{self.spec.grid_size}")
        store = self.store
        cur = y
        for i in range(1, self.spec.stages + 1):
            cur = conv2d(cur, store.params[f"conv{i}.w"], store.params[f"conv{i}.b"],
                         stride=STAGE_STRIDE, pad=STAGE_PAD)
            cur = leaky_relu(cur, slope=self.spec.slope)
            cur = dropout(cur, self.spec.drop_rate, mode, rng)
        cur = cur.reshape((n, self.spec.dense_width()))
        # dropout on every layer's activations, the dense input included
        cur = dropout(cur, self.spec.drop_rate, mode, rng)
        cur = dense(cur, store.params["out.w"], store.params["out.b"])
        return sigmoid(cur).reshape((n,))

    def n_parameters(self) -> int:
        return self.store.n_parameters()
