"""Dense 4-D tensors with tape-based reverse-mode automatic differentiation.

Values are immutable float arrays of shape (batch, channels, height, width).
Operations executed while a :class:`Tape` is active record themselves on it;
:func:`backward` replays the tape in reverse execution order (which is a
reverse topological order, since every operand exists before its consumer)
and accumulates gradients for every value the tape produced.

The operation set is fixed: same-padding stride-1 convolution (plus a fused
multi-gate variant that shares one im2col per input group), the elementwise
functions needed by convolutional LSTM cells, 2x max pooling, 2x bilinear
upsampling, and the scalar reductions needed by the training loss.
"""

from __future__ import annotations

import itertools
import threading
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

__all__ = [
    "Tensor",
    "ConvKernel",
    "Tape",
    "backward",
    "finite_diff_check",
    "conv2d_same",
    "conv2d_gates",
    "sigmoid",
    "tanh_",
    "hadamard",
    "add",
    "sub",
    "scale",
    "abs_",
    "sum_all",
    "mean_all",
    "concat_channels",
    "maxpool2",
    "upsample_bilinear2",
]

_next_id = itertools.count(1).__next__
_tls = threading.local()

# Above this many bytes the fused conv recomputes its im2col matrix during
# backward instead of keeping it alive in the closure.
_COLS_KEEP_BYTES = 8 << 20


class Tensor:
    """Immutable dense value of shape (batch, channels, height, width)."""

    __slots__ = ("data", "tid")

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype, order="C")
        if arr.ndim != 4:
            raise ShapeError(f"tensor rank must be 4, got {arr.ndim}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.tid = _next_id()

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Take ownership of a freshly computed array without copying."""
        t = object.__new__(cls)
        arr.flags.writeable = False
        t.data = arr
        t.tid = _next_id()
        return t

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=dtype))

    @classmethod
    def full(cls, shape, value, dtype=np.float64) -> "Tensor":
        return cls._wrap(np.full(shape, value, dtype=dtype))

    @classmethod
    def scalar(cls, value, dtype=np.float64) -> "Tensor":
        return cls._wrap(np.full((1, 1, 1, 1), value, dtype=dtype))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.shape != (1, 1, 1, 1):
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data[0, 0, 0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


class ConvKernel:
    """Same-padding convolution parameters: weights (out, in, k, k) + bias.

    The bias is stored as a (1, out, 1, 1) tensor so it broadcasts over the
    convolution output. Kernel size must be odd so the padding (k-1)/2 keeps
    the spatial size unchanged.
    """

    __slots__ = ("in_channels", "out_channels", "k", "weights", "bias")

    def __init__(self, weights: Tensor, bias: Tensor):
        out, cin, kh, kw = weights.shape
        if kh != kw:
            raise ConfigError(f"kernel must be square, got {kh}x{kw}")
        if kh % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {kh}")
        if bias.shape != (1, out, 1, 1):
            raise ShapeError(f"bias shape {bias.shape} does not match {out} output channels")
        if weights.dtype != bias.dtype:
            raise ShapeError("weights and bias dtype differ")
        self.in_channels = cin
        self.out_channels = out
        self.k = kh
        self.weights = weights
        self.bias = bias

    @classmethod
    def zeros(cls, in_channels: int, out_channels: int, k: int, dtype=np.float64) -> "ConvKernel":
        return cls(
            Tensor.zeros((out_channels, in_channels, k, k), dtype),
            Tensor.zeros((1, out_channels, 1, 1), dtype),
        )

    @property
    def dtype(self):
        return self.weights.dtype

    def __repr__(self) -> str:
        return f"ConvKernel({self.in_channels}->{self.out_channels}, k={self.k})"


class Tape:
    """Wengert list of recorded operations plus gradient accumulators.

    A tape is single-owner: one thread builds a forward pass under
    ``with Tape() as tape:`` and then calls :func:`backward` on it.
    Accumulators are created lazily and only ever added into; values never
    touched by the backward sweep read back as zero gradients.
    """

    def __init__(self):
        self._nodes: list[tuple[tuple[int, ...], Callable]] = []
        self._made: set[int] = set()
        self._grads: dict[int, np.ndarray] = {}
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_tls, "tape", None)
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> bool:
        _tls.tape = self._prev
        return False

    def _record(self, out_ids: tuple[int, ...], fn: Callable) -> None:
        self._nodes.append((out_ids, fn))
        self._made.update(out_ids)

    def produced(self, value: Tensor) -> bool:
        return value.tid in self._made

    def grad(self, value) -> np.ndarray:
        """Accumulated gradient of the last backward() root w.r.t. ``value``."""
        tensor = value.weights if isinstance(value, ConvKernel) else value
        g = self._grads.get(tensor.tid)
        if g is None:
            return np.zeros_like(tensor.data)
        return g

    def __len__(self) -> int:
        return len(self._nodes)


def _tape() -> Tape | None:
    return getattr(_tls, "tape", None)


def backward(tape: Tape, root: Tensor) -> None:
    """Accumulate d(root)/d(value) on ``tape`` for every recorded value.

    ``root`` must be a scalar (1,1,1,1) tensor produced on this tape.
    """
    if not isinstance(tape, Tape):
        raise UsageError("backward() needs a Tape")
    if root.tid not in tape._made:
        raise UsageError("backward root was not produced on this tape")
    if root.shape != (1, 1, 1, 1):
        raise UsageError(f"backward root must be scalar-shaped, got {root.shape}")
    grads = tape._grads
    grads.clear()
    grads[root.tid] = np.ones((1, 1, 1, 1), root.dtype)
    for out_ids, fn in reversed(tape._nodes):
        gs = [grads.get(i) for i in out_ids]
        if all(g is None for g in gs):
            continue
        for vid, g in fn(gs):
            if g is None:
                continue
            acc = grads.get(vid)
            # never mutate stored arrays in place: closures may share them
            grads[vid] = g if acc is None else acc + g


# ---------------------------------------------------------------------------
# elementwise operations


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function via 0.5 * (1 + tanh(x/2)), overflow-safe everywhere."""
    out = np.tanh(x.data * 0.5)
    out += 1.0
    out *= 0.5
    y = Tensor._wrap(out)
    t = _tape()
    if t is not None:
        yd = y.data

        def bw(gs, xid=x.tid, yd=yd):
            g = gs[0]
            return ((xid, g * yd * (1.0 - yd)),)

        t._record((y.tid,), bw)
    return y


def tanh_(x: Tensor) -> Tensor:
    y = Tensor._wrap(np.tanh(x.data))
    t = _tape()
    if t is not None:
        yd = y.data

        def bw(gs, xid=x.tid, yd=yd):
            g = gs[0]
            return ((xid, g * (1.0 - yd * yd)),)

        t._record((y.tid,), bw)
    return y


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two equal-shaped tensors."""
    _check_binary(a, b, "hadamard")
    y = Tensor._wrap(a.data * b.data)
    t = _tape()
    if t is not None:

        def bw(gs, aid=a.tid, bid=b.tid, ad=a.data, bd=b.data):
            g = gs[0]
            return ((aid, g * bd), (bid, g * ad))

        t._record((y.tid,), bw)
    return y


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")
    y = Tensor._wrap(a.data + b.data)
    t = _tape()
    if t is not None:

        def bw(gs, aid=a.tid, bid=b.tid):
            g = gs[0]
            return ((aid, g), (bid, g))

        t._record((y.tid,), bw)
    return y


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")
    y = Tensor._wrap(a.data - b.data)
    t = _tape()
    if t is not None:

        def bw(gs, aid=a.tid, bid=b.tid):
            g = gs[0]
            return ((aid, g), (bid, -g))

        t._record((y.tid,), bw)
    return y


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python constant (the constant gets no gradient)."""
    y = Tensor._wrap(x.data * x.dtype.type(factor))
    t = _tape()
    if t is not None:

        def bw(gs, xid=x.tid, f=x.dtype.type(factor)):
            return ((xid, gs[0] * f),)

        t._record((y.tid,), bw)
    return y


def abs_(x: Tensor) -> Tensor:
    """Elementwise absolute value; the subgradient at 0 is 0."""
    y = Tensor._wrap(np.abs(x.data))
    t = _tape()
    if t is not None:

        def bw(gs, xid=x.tid, xd=x.data):
            return ((xid, gs[0] * np.sign(xd)),)

        t._record((y.tid,), bw)
    return y


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a (1,1,1,1) scalar tensor."""
    y = Tensor._wrap(np.full((1, 1, 1, 1), x.data.sum(), x.dtype))
    t = _tape()
    if t is not None:

        def bw(gs, xid=x.tid, shape=x.data.shape, dt=x.dtype):
            return ((xid, np.full(shape, gs[0][0, 0, 0, 0], dt)),)

        t._record((y.tid,), bw)
    return y


def mean_all(x: Tensor) -> Tensor:
    """Mean of every element, as a (1,1,1,1) scalar tensor."""
    return scale(sum_all(x), 1.0 / x.data.size)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join along the channel axis; ``a`` channels come first."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: (b,h,w) mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"concat_channels: dtype mismatch {a.dtype} vs {b.dtype}")
    y = Tensor._wrap(np.concatenate([a.data, b.data], axis=1))
    t = _tape()
    if t is not None:
        ca = a.shape[1]

        def bw(gs, aid=a.tid, bid=b.tid, ca=ca):
            g = gs[0]
            return ((aid, g[:, :ca]), (bid, g[:, ca:]))

        t._record((y.tid,), bw)
    return y


# ---------------------------------------------------------------------------
# spatial resampling


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; requires even height and width.

    The argmax position inside each window is recorded so the gradient is
    routed entirely to that element; ties go to the first element in a
    row-major scan of the window.
    """
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial size, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = x.data.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    idx = win.argmax(axis=4)
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    y = Tensor._wrap(np.ascontiguousarray(out))
    t = _tape()
    if t is not None:

        def bw(gs, xid=x.tid, idx=idx, b=b, c=c, h=h, w=w):
            g = gs[0]
            z = np.zeros((b, c, h // 2, w // 2, 4), g.dtype)
            np.put_along_axis(z, idx[..., None], g[..., None], axis=4)
            full = z.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            return ((xid, full.reshape(b, c, h, w)),)

        t._record((y.tid,), bw)
    return y


@lru_cache(maxsize=None)
def _upsample_matrix(n: int, dtype_name: str) -> np.ndarray:
    """(2n, n) bilinear interpolation matrix, half-pixel convention.

    Output coordinate d samples source coordinate (d + 0.5)/2 - 0.5 clamped
    to [0, n-1]; the two nearest sources are blended linearly.
    """
    m = np.zeros((2 * n, n), dtype=np.dtype(dtype_name))
    for d in range(2 * n):
        s = (d + 0.5) / 2.0 - 0.5
        s = min(max(s, 0.0), float(n - 1))
        i0 = int(np.floor(s))
        f = s - i0
        i1 = min(i0 + 1, n - 1)
        m[d, i0] += 1.0 - f
        m[d, i1] += f
    m.flags.writeable = False
    return m


def upsample_bilinear2(x: Tensor) -> Tensor:
    """Double the spatial size by bilinear interpolation (half-pixel grid)."""
    b, c, h, w = x.shape
    rm = _upsample_matrix(h, x.dtype.name)
    cm = _upsample_matrix(w, x.dtype.name)
    out = np.matmul(np.matmul(rm, x.data), cm.T)
    y = Tensor._wrap(np.ascontiguousarray(out))
    t = _tape()
    if t is not None:

        def bw(gs, xid=x.tid, rm=rm, cm=cm):
            g = gs[0]
            return ((xid, np.matmul(np.matmul(rm.T, g), cm)),)

        t._record((y.tid,), bw)
    return y


# ---------------------------------------------------------------------------
# convolution


@lru_cache(maxsize=None)
def _col_index(c: int, h: int, w: int, k: int) -> np.ndarray:
    """Flat gather indices turning a padded (c, h+2p, w+2p) image into
    im2col rows; feature order is channel-major, then (ky, kx)."""
    p = (k - 1) // 2
    hp, wp = h + 2 * p, w + 2 * p
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    taps = (ys[..., None, None] + np.arange(k)[None, None, :, None]) * wp
    taps = taps + xs[..., None, None] + np.arange(k)[None, None, None, :]
    idx = np.arange(c)[None, None, :, None, None] * (hp * wp) + taps[:, :, None, :, :]
    idx = np.ascontiguousarray(idx.reshape(h * w, c * k * k), dtype=np.intp)
    idx.flags.writeable = False
    return idx


def _pad_same(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * p, w + 2 * p), x.dtype)
    out[:, :, p : p + h, p : p + w] = x
    return out


def _im2col(xp: np.ndarray, c: int, h: int, w: int, k: int) -> np.ndarray:
    """(b*h*w, c*k*k) window matrix of a padded image batch."""
    b = xp.shape[0]
    idx = _col_index(c, h, w, k)
    return np.take(xp.reshape(b, -1), idx, axis=1).reshape(b * h * w, c * k * k)


def _mirror_weight(wmat: np.ndarray, c_tot: int, k: int) -> np.ndarray:
    """Channel-swapped, spatially flipped weight matrix.

    Correlating the output gradient with this matrix under the same padding
    is the exact adjoint of the forward correlation, so the input gradient
    can reuse the gather-plus-matmul path instead of a scatter-add.
    """
    n_out = wmat.shape[0]
    flipped = wmat.reshape(n_out, c_tot, k, k).transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    return flipped.reshape(c_tot, n_out * k * k)


def _col2im(gcols: np.ndarray, b: int, c: int, h: int, w: int, k: int) -> np.ndarray:
    """Scatter-add im2col gradients back to a (b, c, h, w) image batch."""
    p = (k - 1) // 2
    gc = gcols.reshape(b, h, w, c, k, k)
    gp = np.zeros((b, h + 2 * p, w + 2 * p, c), gcols.dtype)
    for ky in range(k):
        for kx in range(k):
            gp[:, ky : ky + h, kx : kx + w, :] += gc[:, :, :, :, ky, kx]
    return gp[:, p : p + h, p : p + w, :].transpose(0, 3, 1, 2)


def conv2d_gates(
    inputs: Sequence[Tensor], gates: Sequence[Sequence[ConvKernel]]
) -> tuple[Tensor, ...]:
    """Fused bank of same-padding stride-1 convolutions.

    Each entry of ``gates`` pairs one kernel per input; that gate's output is
    the sum over inputs of input_j cross-correlated with kernel_j, plus every
    kernel's bias. All kernels must share one odd kernel size, so the whole
    bank costs a single im2col and a single matrix product. Returns one
    tensor per gate.
    """
    if not inputs or not gates:
        raise UsageError("conv2d_gates needs at least one input and one gate")
    b, _, h, w = inputs[0].shape
    dt = inputs[0].dtype
    for x in inputs[1:]:
        if x.shape[0] != b or x.shape[2:] != (h, w):
            raise ShapeError(f"conv2d_gates: (b,h,w) mismatch {inputs[0].shape} vs {x.shape}")
        if x.dtype != dt:
            raise ShapeError("conv2d_gates: input dtype mismatch")
    k = gates[0][0].k
    for row in gates:
        if len(row) != len(inputs):
            raise UsageError("conv2d_gates: each gate needs one kernel per input")
        for kern, x in zip(row, inputs):
            if kern.k != k:
                raise ConfigError(f"conv2d_gates: mixed kernel sizes {kern.k} vs {k}")
            if kern.in_channels != x.shape[1]:
                raise ShapeError(
                    f"conv2d_gates: kernel expects {kern.in_channels} channels, "
                    f"input has {x.shape[1]}"
                )
            if kern.dtype != dt:
                raise ShapeError("conv2d_gates: kernel dtype mismatch")

    c_in = [x.shape[1] for x in inputs]
    c_tot = sum(c_in)
    outs = [row[0].out_channels for row in gates]
    for row, o in zip(gates, outs):
        for kern in row:
            if kern.out_channels != o:
                raise ShapeError("conv2d_gates: kernels within a gate must agree on out channels")

    if len(inputs) == 1:
        xc = inputs[0].data
    else:
        xc = np.concatenate([x.data for x in inputs], axis=1)
    p = (k - 1) // 2
    xp = _pad_same(xc, p)
    cols = _im2col(xp, c_tot, h, w, k)

    wmat = np.concatenate(
        [
            np.concatenate([kern.weights.data.reshape(o, -1) for kern in row], axis=1)
            for row, o in zip(gates, outs)
        ],
        axis=0,
    )
    bias = np.concatenate(
        [sum(kern.bias.data.ravel() for kern in row) for row in gates]
    )
    y2 = cols @ wmat.T
    y2 += bias

    lo = 0
    results = []
    bounds = []
    for o in outs:
        block = y2[:, lo : lo + o].reshape(b, h, w, o).transpose(0, 3, 1, 2)
        results.append(Tensor._wrap(np.ascontiguousarray(block)))
        bounds.append((lo, lo + o))
        lo += o

    t = _tape()
    if t is not None:
        keep_cols = cols if cols.nbytes <= _COLS_KEEP_BYTES else None
        xp_ref = None if keep_cols is not None else xp
        in_ids = [x.tid for x in inputs]
        w_ids = [[(kern.weights.tid, kern.bias.tid) for kern in row] for row in gates]
        total_out = lo

        # wide-output k>=5 convolutions move fewer bytes through the
        # scatter-add; everything else is faster as a mirrored correlation
        use_mirror = total_out <= c_tot or k < 5

        def bw(gs):
            gy2 = np.empty((b * h * w, total_out), dt)
            gy_sp = (
                np.zeros((b, total_out, h + 2 * p, w + 2 * p), dt) if use_mirror else None
            )
            for (glo, ghi), g in zip(bounds, gs):
                if g is None:
                    gy2[:, glo:ghi] = 0.0
                else:
                    gy2[:, glo:ghi] = g.transpose(0, 2, 3, 1).reshape(b * h * w, ghi - glo)
                    if use_mirror:
                        gy_sp[:, glo:ghi, p : p + h, p : p + w] = g
            cmat = keep_cols if keep_cols is not None else _im2col(xp_ref, c_tot, h, w, k)
            gw2 = gy2.T @ cmat
            gb = gy2.sum(axis=0)
            if use_mirror:
                gxc2 = _im2col(gy_sp, total_out, h, w, k) @ _mirror_weight(wmat, c_tot, k).T
                gxc = gxc2.reshape(b, h, w, c_tot).transpose(0, 3, 1, 2)
            else:
                gxc = _col2im(gy2 @ wmat, b, c_tot, h, w, k)

            entries: list[tuple[int, np.ndarray]] = []
            for (glo, ghi), row_ids in zip(bounds, w_ids):
                gb_row = gb[glo:ghi].reshape(1, ghi - glo, 1, 1)
                clo = 0
                for (wid, bid), cj in zip(row_ids, c_in):
                    width = cj * k * k
                    gw = gw2[glo:ghi, clo : clo + width].reshape(ghi - glo, cj, k, k)
                    entries.append((wid, np.ascontiguousarray(gw)))
                    entries.append((bid, gb_row))
                    clo += width
            clo = 0
            for xid, cj in zip(in_ids, c_in):
                entries.append((xid, gxc[:, clo : clo + cj]))
                clo += cj
            return entries

        t._record(tuple(r.tid for r in results), bw)
    return tuple(results)


def conv2d_same(x: Tensor, kern: ConvKernel) -> Tensor:
    """Same-padding stride-1 cross-correlation with one kernel plus bias."""
    return conv2d_gates([x], [[kern]])[0]


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must map a parameter list to a scalar tensor and be deterministic.
    The analytic gradient is taken once from a taped run; every parameter
    element is then perturbed by +/- eps and the relative error
    |analytic - central| / max(1e-12, |central|) is maximized over elements.
    """
    params = list(params)
    with Tape() as tape:
        out = f(params)
    backward(tape, out)
    analytic = [tape.grad(p) for p in params]

    worst = 0.0
    for pi, p in enumerate(params):
        base = p.data
        for j in np.ndindex(base.shape):
            up = base.copy()
            up[j] += eps
            down = base.copy()
            down[j] -= eps
            fp = f(params[:pi] + [Tensor._wrap(up)] + params[pi + 1 :]).item()
            fm = f(params[:pi] + [Tensor._wrap(down)] + params[pi + 1 :]).item()
            num = (fp - fm) / (2.0 * eps)
            rel = abs(analytic[pi][j] - num) / max(1e-12, abs(num))
            worst = max(worst, rel)
    return worst
