"""Recurrent cell step functions: single-kernel and multi-kernel ConvLSTM.

Both cells follow the standard gated update
    i, f, g = sigmoid/tanh of gate convolutions over (input, hidden)
    C' = f * C + i * g
    H' = o * tanh(.)
The multi-kernel cell runs two such branches in parallel, a small-kernel one
updating C and a wide-kernel one updating a second memory, fuses them with a
six-convolution output gate, and mixes the two memories through a 1x1
convolution before the final tanh.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    ConvKernel,
    Tensor,
    add,
    concat_channels,
    conv2d_gates,
    conv2d_same,
    hadamard,
    sigmoid,
    tanh_,
)

__all__ = [
    "ConvLSTMParams",
    "MKLSTMParams",
    "ConvState",
    "MKState",
    "convlstm_step",
    "mklstm_step",
    "init_params",
    "zero_state",
]


class ConvState(NamedTuple):
    """Recurrent state of a ConvLSTM cell: hidden map and cell memory."""

    h: Tensor
    c: Tensor


class MKState(NamedTuple):
    """State of a multi-kernel cell: hidden map plus two cell memories."""

    h: Tensor
    c: Tensor
    c_wide: Tensor


@dataclass
class ConvLSTMParams:
    """Eight convolution kernels, one (x, h) pair per gate."""

    w_ix: ConvKernel
    w_ih: ConvKernel
    w_fx: ConvKernel
    w_fh: ConvKernel
    w_gx: ConvKernel
    w_gh: ConvKernel
    w_ox: ConvKernel
    w_oh: ConvKernel

    def kernels(self) -> Iterator[tuple[str, ConvKernel]]:
        for fld in fields(self):
            yield fld.name, getattr(self, fld.name)

    @property
    def hidden(self) -> int:
        return self.w_ix.out_channels

    @property
    def in_channels(self) -> int:
        return self.w_ix.in_channels


@dataclass
class MKLSTMParams:
    """Nine small kernels, nine wide kernels, and the 1x1 memory mixer.

    The *_oc kernels consume the freshly updated cell memories inside the
    output gate; w_mix maps the channel-concatenated pair of memories
    (narrow first) back to the hidden width.
    """

    w_ix: ConvKernel
    w_ih: ConvKernel
    w_fx: ConvKernel
    w_fh: ConvKernel
    w_gx: ConvKernel
    w_gh: ConvKernel
    w_ox: ConvKernel
    w_oh: ConvKernel
    w_oc: ConvKernel
    wp_ix: ConvKernel
    wp_ih: ConvKernel
    wp_fx: ConvKernel
    wp_fh: ConvKernel
    wp_gx: ConvKernel
    wp_gh: ConvKernel
    wp_ox: ConvKernel
    wp_oh: ConvKernel
    wp_oc: ConvKernel
    w_mix: ConvKernel

    def kernels(self) -> Iterator[tuple[str, ConvKernel]]:
        for fld in fields(self):
            yield fld.name, getattr(self, fld.name)

    @property
    def hidden(self) -> int:
        return self.w_ix.out_channels

    @property
    def in_channels(self) -> int:
        return self.w_ix.in_channels


def _check_step_shapes(p, x: Tensor, h: Tensor) -> None:
    if x.shape[1] != p.in_channels:
        raise ShapeError(f"cell expects {p.in_channels} input channels, got {x.shape[1]}")
    if h.shape[1] != p.hidden:
        raise ShapeError(f"state has {h.shape[1]} channels, cell hidden is {p.hidden}")
    if x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise ShapeError(f"input {x.shape} and state {h.shape} disagree on (b,h,w)")


def convlstm_step(p: ConvLSTMParams, x: Tensor, s: ConvState) -> tuple[Tensor, ConvState]:
    """One ConvLSTM update; returns the new hidden map and the new state."""
    _check_step_shapes(p, x, s.h)
    pi, pf, pg, po = conv2d_gates(
        [x, s.h],
        [[p.w_ix, p.w_ih], [p.w_fx, p.w_fh], [p.w_gx, p.w_gh], [p.w_ox, p.w_oh]],
    )
    i = sigmoid(pi)
    f = sigmoid(pf)
    g = tanh_(pg)
    o = sigmoid(po)
    c_new = add(hadamard(f, s.c), hadamard(i, g))
    h_new = hadamard(o, tanh_(c_new))
    return h_new, ConvState(h_new, c_new)


def mklstm_step(p: MKLSTMParams, x: Tensor, s: MKState) -> tuple[Tensor, MKState]:
    """One multi-kernel update; returns the new hidden map and state."""
    _check_step_shapes(p, x, s.h)
    i3p, f3p, g3p, o3p = conv2d_gates(
        [x, s.h],
        [[p.w_ix, p.w_ih], [p.w_fx, p.w_fh], [p.w_gx, p.w_gh], [p.w_ox, p.w_oh]],
    )
    i5p, f5p, g5p, o5p = conv2d_gates(
        [x, s.h],
        [[p.wp_ix, p.wp_ih], [p.wp_fx, p.wp_fh], [p.wp_gx, p.wp_gh], [p.wp_ox, p.wp_oh]],
    )
    c_new = add(hadamard(sigmoid(f3p), s.c), hadamard(sigmoid(i3p), tanh_(g3p)))
    cw_new = add(hadamard(sigmoid(f5p), s.c_wide), hadamard(sigmoid(i5p), tanh_(g5p)))
    o_pre = add(
        add(o3p, o5p),
        add(conv2d_same(c_new, p.w_oc), conv2d_same(cw_new, p.wp_oc)),
    )
    o = sigmoid(o_pre)
    mixed = conv2d_same(concat_channels(c_new, cw_new), p.w_mix)
    h_new = hadamard(o, tanh_(mixed))
    return h_new, MKState(h_new, c_new, cw_new)


def _xavier_kernel(
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    k: int,
    dtype,
    forget: bool = False,
) -> ConvKernel:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)).

    Fans are counted per kernel (channels times k^2). Biases start at zero,
    except forget-gate kernels whose biases start at one.
    """
    fan_in = in_channels * k * k
    fan_out = out_channels * k * k
    a = float(np.sqrt(6.0 / (fan_in + fan_out)))
    w = rng.uniform(-a, a, size=(out_channels, in_channels, k, k)).astype(dtype)
    b = np.full((1, out_channels, 1, 1), 1.0 if forget else 0.0, dtype=dtype)
    return ConvKernel(Tensor._wrap(w), Tensor._wrap(b))


def init_params(
    kind: str,
    in_channels: int,
    hidden: int,
    k: int = 3,
    k_wide: int = 5,
    rng: np.random.Generator | int | None = 0,
    dtype=np.float64,
):
    """Build freshly initialized cell parameters.

    ``kind`` is "conv" or "multikernel". Weights are drawn in declared field
    order from one generator, so a fixed seed reproduces the parameters
    bit for bit.
    """
    if in_channels < 1 or hidden < 1:
        raise ConfigError(f"channel counts must be positive, got {in_channels}/{hidden}")
    if k % 2 == 0 or k_wide % 2 == 0:
        raise ConfigError(f"kernel sizes must be odd, got {k}/{k_wide}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    def kern(cin, cout, size, forget=False):
        return _xavier_kernel(rng, cin, cout, size, dtype, forget)

    if kind == "conv":
        return ConvLSTMParams(
            w_ix=kern(in_channels, hidden, k),
            w_ih=kern(hidden, hidden, k),
            w_fx=kern(in_channels, hidden, k, forget=True),
            w_fh=kern(hidden, hidden, k, forget=True),
            w_gx=kern(in_channels, hidden, k),
            w_gh=kern(hidden, hidden, k),
            w_ox=kern(in_channels, hidden, k),
            w_oh=kern(hidden, hidden, k),
        )
    if kind == "multikernel":
        return MKLSTMParams(
            w_ix=kern(in_channels, hidden, k),
            w_ih=kern(hidden, hidden, k),
            w_fx=kern(in_channels, hidden, k, forget=True),
            w_fh=kern(hidden, hidden, k, forget=True),
            w_gx=kern(in_channels, hidden, k),
            w_gh=kern(hidden, hidden, k),
            w_ox=kern(in_channels, hidden, k),
            w_oh=kern(hidden, hidden, k),
            w_oc=kern(hidden, hidden, k),
            wp_ix=kern(in_channels, hidden, k_wide),
            wp_ih=kern(hidden, hidden, k_wide),
            wp_fx=kern(in_channels, hidden, k_wide, forget=True),
            wp_fh=kern(hidden, hidden, k_wide, forget=True),
            wp_gx=kern(in_channels, hidden, k_wide),
            wp_gh=kern(hidden, hidden, k_wide),
            wp_ox=kern(in_channels, hidden, k_wide),
            wp_oh=kern(hidden, hidden, k_wide),
            wp_oc=kern(hidden, hidden, k_wide),
            w_mix=kern(2 * hidden, hidden, 1),
        )
    raise ConfigError(f"unknown cell kind {kind!r}, expected 'conv' or 'multikernel'")


def zero_state(kind: str, b: int, hidden: int, h: int, w: int, dtype=np.float64):
    """All-zero recurrent state of the right shape for the cell kind."""
    shape = (b, hidden, h, w)
    if kind == "conv":
        return ConvState(Tensor.zeros(shape, dtype), Tensor.zeros(shape, dtype))
    if kind == "multikernel":
        return MKState(
            Tensor.zeros(shape, dtype), Tensor.zeros(shape, dtype), Tensor.zeros(shape, dtype)
        )
    raise ConfigError(f"unknown cell kind {kind!r}, expected 'conv' or 'multikernel'")
