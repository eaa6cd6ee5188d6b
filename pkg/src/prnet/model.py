"""Multi-encoder kernel-prediction UNet and its 5-level single-encoder baseline.

Every convolution is 3x3 with replication padding so constant inputs give
constant feature maps; rotated encoders then agree exactly on such inputs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

PRNET_LEVELS = (32, 64, 128)
BASELINE_LEVELS = (32, 64, 128, 256, 512)
SUBNETS = ("weight1", "alpha1", "beta1", "weight2", "alpha2", "beta2", "occlusion")
VARIANTS = ("prnet", "adacof_baseline")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "prnet"
    encoders: int = 1
    rotate: bool = False
    kernel_size: int = 5
    dilation: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "prnet":
            if self.encoders not in (1, 2, 3, 4):
                raise ConfigError(f"encoders must be 1..4, got {self.encoders}")
            if self.rotate and self.encoders != 4:
                raise ConfigError("rotate=True requires encoders=4")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0 or self.dilation < 1:
            raise ConfigError("kernel_size must be odd and dilation >= 1")

    @property
    def levels(self) -> tuple[int, ...]:
        return PRNET_LEVELS if self.variant == "prnet" else BASELINE_LEVELS

    @property
    def num_encoders(self) -> int:
        return self.encoders if self.variant == "prnet" else 1

    @property
    def size_multiple(self) -> int:
        return 2 ** len(self.levels)

    @property
    def label(self) -> str:
        if self.variant != "prnet":
            return "AdaCoFNet"
        return f"PRNet_{self.encoders}" + ("*" if self.rotate else "")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def from_label(cls, label: str) -> "ModelConfig":
        """Parse ``PRNet_3``, ``prnet4*``, ``baseline`` / ``AdaCoFNet``."""
        s = label.strip().lower().replace("_", "")
        if s in ("baseline", "adacofnet", "adacof", "adacofbaseline"):
            return cls(variant="adacof_baseline")
        if s.startswith("prnet"):
            rest = s[len("prnet"):]
            rotate = rest.endswith("*")
            return cls(encoders=int(rest.rstrip("*")), rotate=rotate)
        raise ConfigError(f"cannot parse model label {label!r}")

    def angle_of(self, encoder_index: int) -> int:
        """Quarter turns applied to the input of encoder ``encoder_index`` (1-based)."""
        return (encoder_index - 1) % 4 if self.rotate else 0


@dataclass
class KernelField:
    """Per-pixel warp parameters for both frames plus the occlusion map."""

    weight1: Tensor
    alpha1: Tensor
    beta1: Tensor
    weight2: Tensor
    alpha2: Tensor
    beta2: Tensor
    occlusion: Tensor
    psi: Tensor | None = None
    fused: dict = field(default_factory=dict)


def layer_plan(config: ModelConfig):
    """Yield ``(name, in_channels, out_channels)`` for every conv in registration order."""
    lv = config.levels
    for e in range(1, config.num_encoders + 1):
        for L, c in enumerate(lv, start=1):
            cin = 6 if L == 1 else lv[L - 2]
            for i in range(3):
                yield f"encoder.{e}.block{L}.conv{i}", cin if i == 0 else c, c
    top = len(lv)
    for L in range(top, 1, -1):
        c = lv[L - 1]
        cin = lv[L] if L < top else c
        for i in range(3):
            yield f"decoder.deconv{L}.conv{i}", cin if i == 0 else c, c
        yield f"decoder.upsample{L}.conv0", c, c
    c2, taps = lv[1], config.kernel_size ** 2
    for s in SUBNETS:
        if s == "occlusion":
            for i in range(3):
                yield f"subnet.{s}.conv{i}", c2, c2
            yield f"subnet.{s}.conv3", c2, 1
        else:
            yield f"subnet.{s}.conv0", c2, c2
            yield f"subnet.{s}.conv1", c2, c2
            yield f"subnet.{s}.conv2", c2, taps
            yield f"subnet.{s}.conv3", taps, taps


class Model:
    """Ordered collection of named conv parameters plus the forward wiring."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=None):
        self.config = config
        self.dtype = np.dtype(dtype or T.get_default_dtype()).type
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self._register()
        del self._rng

    # registration -------------------------------------------------------
    def _conv(self, name: str, cin: int, cout: int) -> None:
        fan_in = cin * 9
        bound = math.sqrt(2.0) * math.sqrt(3.0 / fan_in)
        w = self._rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(self.dtype)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True,
                                             name=f"{name}.bias")

    def _register(self) -> None:
        for name, cin, cout in layer_plan(self.config):
            self._conv(name, cin, cout)

    # access ---------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def to_dtype(self, dtype) -> "Model":
        """Cast all parameters in place (64-bit for gradient checks)."""
        self.dtype = np.dtype(dtype).type
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def conv(self, name: str, x: Tensor, activation: bool = True) -> Tensor:
        y = T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], 1, "replicate")
        return T.relu(y) if activation else y

    def block(self, prefix: str, x: Tensor, n: int = 3) -> Tensor:
        for i in range(n):
            x = self.conv(f"{prefix}.conv{i}", x)
        return x

    def encode(self, e: int, x: Tensor) -> list[Tensor]:
        """Per-level outputs of encoder ``e`` in its own (rotated) frame."""
        maps = []
        for L in range(1, len(self.config.levels) + 1):
            if L > 1:
                x = T.avg_pool2(x)
            x = self.block(f"encoder.{e}.block{L}", x)
            maps.append(x)
        return maps

    def __call__(self, frame1: Tensor, frame2: Tensor, diagnostics: bool = False) -> KernelField:
        return forward_features(self, frame1, frame2, diagnostics=diagnostics)


def build(config: ModelConfig, seed: int = 0, dtype=None) -> Model:
    return Model(config, seed=seed, dtype=dtype)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape, computed from the layer plan alone."""
    shapes = {}
    for name, cin, cout in layer_plan(config):
        shapes[f"{name}.weight"] = (cout, cin, 3, 3)
        shapes[f"{name}.bias"] = (cout,)
    return shapes


def count_params(model: Model | ModelConfig) -> int:
    """Number of trainable scalars; accepts a built model or just its config."""
    if isinstance(model, ModelConfig):
        return sum(math.prod(s) for s in param_shapes(model).values())
    return sum(p.data.size for p in model.params.values())


def reduction_percent(config: ModelConfig) -> float:
    """Parameter reduction relative to the 5-level baseline, in percent."""
    base = count_params(ModelConfig(variant="adacof_baseline"))
    return 100.0 * (1 - count_params(config) / base)


def fuse_features(maps: Sequence[Tensor], angles: Sequence[int]) -> Tensor:
    """Back-rotate each encoder's map to 0 degrees and sum in encoder order."""
    if len(maps) != len(angles) or not maps:
        raise T.OpError("fuse_features", f"{len(maps)} maps for {len(angles)} angles")
    out = None
    for m, a in zip(maps, angles):
        r = T.rot90(m, (4 - a) % 4)
        if out is not None and r.shape != out.shape:
            raise T.OpError("fuse_features", f"back-rotated shape {r.shape} does not match {out.shape}")
        out = r if out is None else T.add(out, r)
    return out


def forward_features(model: Model, frame1: Tensor, frame2: Tensor,
                     diagnostics: bool = False) -> KernelField:
    """Run encoders, fusion, decoder and subnets on two (N,3,H,W) frames."""
    cfg = model.config
    T._check_rank4("forward_features", frame1, frame2)
    if frame1.shape != frame2.shape or frame1.shape[1] != 3:
        raise T.OpError("forward_features", f"frames must be equal (N,3,H,W), got {frame1.shape}, {frame2.shape}")
    H, W = frame1.shape[2:]
    mult = cfg.size_multiple
    if H % mult or W % mult:
        raise T.OpError("forward_features", f"H and W must be multiples of {mult}, got {H}x{W}")

    x = T.concat([frame1, frame2])
    per_level: list[list[Tensor]] = [[] for _ in cfg.levels]
    angles = [cfg.angle_of(e) for e in range(1, cfg.num_encoders + 1)]
    for e, a in enumerate(angles, start=1):
        for L, m in enumerate(model.encode(e, T.rot90(x, a))):
            per_level[L].append(m)

    top = len(cfg.levels)
    fused = {}
    for L in range(2 if not diagnostics else 1, top + 1):
        fused[L] = fuse_features(per_level[L - 1], angles)

    h = T.avg_pool2(fused[top])
    for L in range(top, 1, -1):
        h = model.block(f"decoder.deconv{L}", h)
        h = model.conv(f"decoder.upsample{L}.conv0", T.upsample_bilinear2(h))
        h = T.add(h, fused[L])
    psi = h

    out = {}
    for s in SUBNETS:
        p = f"subnet.{s}"
        y = model.block(p, psi)
        y = model.conv(f"{p}.conv3", T.upsample_bilinear2(y), activation=False)
        if s == "occlusion":
            y = T.sigmoid(y)
        elif s.startswith("weight"):
            y = T.channel_softmax(y)
        out[s] = y
    return KernelField(**out, psi=psi, fused=fused if diagnostics else {})
