"""Stacked recurrent networks: flat stacks and mirrored-pyramid variants.

A network is an ordered list of cell layers, each running at a power-of-two
fraction of the input resolution. Max pooling is inserted where the scale
divisor doubles between consecutive layers, bilinear upsampling where it
halves. Skip connections add an encoder layer's hidden output into the input
of the same-scale decoder layer within the same time step. A parameter-free
1x1 convolution head maps the last hidden map back to image channels.

Four presets are provided: a flat single-kernel stack (convlstm6), the same
stack with the pyramid (sms6), a flat multi-kernel stack (tms6), and the
combined pyramid-plus-multi-kernel network (ms6).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cells import (
    ConvLSTMParams,
    MKLSTMParams,
    convlstm_step,
    init_params,
    mklstm_step,
    zero_state,
)
from .errors import ConfigError, ShapeError, UsageError
from .tensor import ConvKernel, Tensor, add, conv2d_same, maxpool2, upsample_bilinear2

__all__ = [
    "LayerSpec",
    "ArchitectureConfig",
    "SequenceSpec",
    "PRESET_NAMES",
    "preset",
    "Model",
    "receptive_field",
    "encoder_receptive_field",
]

PRESET_NAMES = ("convlstm6", "sms6", "tms6", "ms6")

_PYRAMID_SCALES = (1, 2, 4, 4, 2, 1)
_PYRAMID_SKIPS = ((0, 5), (1, 4))


@dataclass(frozen=True)
class LayerSpec:
    """One recurrent layer: cell kind, hidden width, and scale divisor."""

    cell: str
    hidden: int
    scale: int

    def __post_init__(self):
        if self.cell not in ("conv", "multikernel"):
            raise ConfigError(f"unknown cell kind {self.cell!r}")
        if self.hidden < 1:
            raise ConfigError("hidden channels must be positive")
        if self.scale not in (1, 2, 4):
            raise ConfigError(f"scale divisor must be 1, 2 or 4, got {self.scale}")


@dataclass(frozen=True)
class SequenceSpec:
    """Input length m and prediction length n of a rollout."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise UsageError(f"sequence lengths must be >= 1, got m={self.m}, n={self.n}")

    @property
    def total(self) -> int:
        return self.m + self.n


@dataclass(frozen=True)
class ArchitectureConfig:
    """Ordered layer specs, skip pairs, kernel sizes, and image channels."""

    layers: tuple[LayerSpec, ...]
    skips: tuple[tuple[int, int], ...] = ()
    input_channels: int = 1
    kernel_small: int = 3
    kernel_large: int = 5
    preset_name: str = ""

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("at least one layer is required")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")
        if self.kernel_small % 2 == 0 or self.kernel_large % 2 == 0:
            raise ConfigError("kernel sizes must be odd")
        prev = 1
        for spec in self.layers:
            if spec.scale not in (prev, prev * 2, prev // 2):
                raise ConfigError(
                    f"layer scales must change by powers of two, got {prev} -> {spec.scale}"
                )
            prev = spec.scale
        if prev != 1:
            raise ConfigError("the last layer must run at full resolution")
        n = len(self.layers)
        for src, dst in self.skips:
            if not (0 <= src < dst < n):
                raise ConfigError(f"bad skip pair ({src}, {dst})")
            if self.layers[src].scale != self.layers[dst].scale:
                raise ConfigError(
                    f"skip ({src}, {dst}) connects scales "
                    f"{self.layers[src].scale} and {self.layers[dst].scale}"
                )
            if self.layers[src].hidden != self.layers[dst - 1].hidden:
                raise ConfigError(
                    f"skip ({src}, {dst}) would add {self.layers[src].hidden} channels "
                    f"onto {self.layers[dst - 1].hidden}"
                )

    @property
    def max_scale(self) -> int:
        return max(spec.scale for spec in self.layers)

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden


def preset(
    name: str,
    hidden: int = 32,
    input_channels: int = 1,
    kernel_small: int = 3,
    kernel_large: int = 5,
) -> ArchitectureConfig:
    """Build one of the four named 6-layer configurations."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}, expected one of {', '.join(PRESET_NAMES)}")
    cell = "conv" if name in ("convlstm6", "sms6") else "multikernel"
    if name in ("convlstm6", "tms6"):
        scales: Sequence[int] = (1,) * 6
        skips: tuple[tuple[int, int], ...] = ()
    else:
        scales = _PYRAMID_SCALES
        skips = _PYRAMID_SKIPS
    layers = tuple(LayerSpec(cell, hidden, s) for s in scales)
    return ArchitectureConfig(
        layers=layers,
        skips=skips,
        input_channels=input_channels,
        kernel_small=kernel_small,
        kernel_large=kernel_large,
        preset_name=name,
    )


class Model:
    """A built network: per-layer cell parameters plus the 1x1 output head."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.cells = []
        in_ch = config.input_channels
        for spec in config.layers:
            self.cells.append(
                init_params(
                    spec.cell,
                    in_ch,
                    spec.hidden,
                    k=config.kernel_small,
                    k_wide=config.kernel_large,
                    rng=rng,
                    dtype=self.dtype,
                )
            )
            in_ch = spec.hidden
        fan = in_ch + config.input_channels
        a = float(np.sqrt(6.0 / fan))
        head_w = rng.uniform(-a, a, size=(config.input_channels, in_ch, 1, 1)).astype(self.dtype)
        self.head = ConvKernel(
            Tensor._wrap(head_w), Tensor.zeros((1, config.input_channels, 1, 1), self.dtype)
        )

    # -- parameter plumbing ------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All trainable tensors in a fixed, documented order."""
        out = []
        for idx, cell in enumerate(self.cells):
            for name, kern in cell.kernels():
                out.append((f"layer{idx}.{name}.weight", kern.weights))
                out.append((f"layer{idx}.{name}.bias", kern.bias))
        out.append(("head.weight", self.head.weights))
        out.append(("head.bias", self.head.bias))
        return out

    def set_parameter(self, name: str, value: Tensor) -> None:
        if name == "head.weight":
            self.head = ConvKernel(value, self.head.bias)
            return
        if name == "head.bias":
            self.head = ConvKernel(self.head.weights, value)
            return
        layer, kern_name, part = name.split(".")
        cell = self.cells[int(layer.removeprefix("layer"))]
        kern = getattr(cell, kern_name)
        if part == "weight":
            setattr(cell, kern_name, ConvKernel(value, kern.bias))
        elif part == "bias":
            setattr(cell, kern_name, ConvKernel(kern.weights, value))
        else:
            raise UsageError(f"unknown parameter {name!r}")

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())

    # -- forward -----------------------------------------------------------

    def zero_states(self, b: int, h: int, w: int):
        states = []
        for spec in self.config.layers:
            states.append(
                zero_state(spec.cell, b, spec.hidden, h // spec.scale, w // spec.scale, self.dtype)
            )
        return states

    def _check_frame(self, x: Tensor) -> None:
        b, c, h, w = x.shape
        if c != self.config.input_channels:
            raise ShapeError(f"frame has {c} channels, model expects {self.config.input_channels}")
        s = self.config.max_scale
        if h % s or w % s:
            raise ShapeError(f"frame size {h}x{w} not divisible by the pyramid scale {s}")
        if x.dtype != self.dtype:
            raise ShapeError(f"frame dtype {x.dtype} does not match model dtype {self.dtype}")

    def step_frame(self, x: Tensor, states) -> tuple[Tensor, list]:
        """Advance every layer by one time step and emit the next-frame map."""
        pred, new_states, _ = self._step(x, states)
        return pred, new_states

    def _step(self, x: Tensor, states):
        self._check_frame(x)
        cur = x
        prev_scale = 1
        hiddens: list[Tensor] = []
        new_states = []
        skip_into = dict((dst, src) for src, dst in self.config.skips)
        for idx, (spec, cell) in enumerate(zip(self.config.layers, self.cells)):
            if spec.scale == prev_scale * 2:
                cur = maxpool2(cur)
            elif spec.scale * 2 == prev_scale:
                cur = upsample_bilinear2(cur)
            if idx in skip_into:
                cur = add(cur, hiddens[skip_into[idx]])
            step = convlstm_step if spec.cell == "conv" else mklstm_step
            cur, new_state = step(cell, cur, states[idx])
            hiddens.append(cur)
            new_states.append(new_state)
            prev_scale = spec.scale
        pred = conv2d_same(cur, self.head)
        return pred, new_states, hiddens

    def rollout(self, frames: Sequence[Tensor], n: int) -> list[Tensor]:
        """Consume the given frames, then feed back predictions.

        States start at zero. Ground-truth frames drive the first m steps;
        the prediction emitted on step m-1 is the first output, and the
        remaining n-1 steps run closed loop on the model's own outputs.
        """
        if n < 1:
            raise UsageError(f"prediction length must be >= 1, got {n}")
        if not frames:
            raise UsageError("rollout needs at least one input frame")
        b, _, h, w = frames[0].shape
        states = self.zero_states(b, h, w)
        pred = None
        outputs: list[Tensor] = []
        for t, frame in enumerate(frames):
            pred, states = self.step_frame(frame, states)
            if t == len(frames) - 1:
                outputs.append(pred)
        for _ in range(n - 1):
            pred, states = self.step_frame(pred, states)
            outputs.append(pred)
        return outputs

    def trace(self, frames: Sequence[Tensor]):
        """Teacher-forced pass over every frame, keeping per-layer hiddens.

        Returns (predictions, hiddens) where predictions[t] is the map
        emitted after consuming frames[t] and hiddens[t][l] is layer l's
        hidden output at that step.
        """
        if not frames:
            raise UsageError("trace needs at least one frame")
        b, _, h, w = frames[0].shape
        states = self.zero_states(b, h, w)
        preds, hidden_log = [], []
        for frame in frames:
            pred, states, hiddens = self._step(frame, states)
            preds.append(pred)
            hidden_log.append(hiddens)
        return preds, hidden_log


def receptive_field(config: ArchitectureConfig) -> list[dict]:
    """Single-step spatial receptive field after each layer.

    A cell step counts as one k x k convolution (its largest kernel for
    multi-kernel cells). Max pooling applies rf += jump then doubles the
    jump; upsampling halves the jump then applies rf += jump.
    """
    rf, jump = 1, 1
    prev = 1
    rows = []
    for idx, spec in enumerate(config.layers):
        if spec.scale == prev * 2:
            rf += jump
            jump *= 2
        elif spec.scale * 2 == prev:
            jump = max(1, jump // 2)
            rf += jump
        k = config.kernel_small if spec.cell == "conv" else config.kernel_large
        rf += (k - 1) * jump
        rows.append({"layer": idx, "cell": spec.cell, "scale": spec.scale, "rf": rf, "jump": jump})
        prev = spec.scale
    return rows


def encoder_receptive_field(config: ArchitectureConfig) -> int:
    """Receptive field after the encoder half of the stack."""
    rows = receptive_field(config)
    return rows[len(rows) // 2 - 1]["rf"]
