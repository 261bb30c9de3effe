"""Independent reference implementations used as test oracles.

Everything here is written naively (explicit loops, no shared code with the
package) so the fast paths in mslstm are checked against a second route.
"""

import numpy as np

from mslstm.tensor import (
    ConvKernel,
    Tensor,
    add,
    concat_channels,
    conv2d_same,
    hadamard,
    sigmoid,
    tanh_,
)


def ref_conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Quadruple-loop same-padding cross-correlation."""
    b, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = (k - 1) // 2
    xp = np.zeros((b, cin, h + 2 * p, wd + 2 * p), x.dtype)
    xp[:, :, p : p + h, p : p + wd] = x
    y = np.zeros((b, cout, h, wd), x.dtype)
    for bi in range(b):
        for o in range(cout):
            for yy in range(h):
                for xx in range(wd):
                    acc = 0.0
                    for i in range(cin):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[bi, i, yy + ky, xx + kx] * w[o, i, ky, kx]
                    y[bi, o, yy, xx] = acc + bias[o]
    return y


def ref_upsample_row(row: np.ndarray) -> np.ndarray:
    """1-D half-pixel bilinear doubling of a vector."""
    n = len(row)
    out = np.zeros(2 * n, row.dtype)
    for d in range(2 * n):
        s = min(max((d + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(s))
        f = s - i0
        i1 = min(i0 + 1, n - 1)
        out[d] = (1 - f) * row[i0] + f * row[i1]
    return out


def random_kernel(rng, cin, cout, k, scale=0.4, dtype=np.float64) -> ConvKernel:
    w = Tensor(rng.uniform(-scale, scale, size=(cout, cin, k, k)), dtype=dtype)
    b = Tensor(rng.uniform(-scale, scale, size=(1, cout, 1, 1)), dtype=dtype)
    return ConvKernel(w, b)


def composite_convlstm_step(p, x, state):
    """ConvLSTM step built only from public single-kernel ops.

    Second route for the fused implementation in mslstm.cells.
    """
    h, c = state.h, state.c
    i = sigmoid(add(conv2d_same(x, p.w_ix), conv2d_same(h, p.w_ih)))
    f = sigmoid(add(conv2d_same(x, p.w_fx), conv2d_same(h, p.w_fh)))
    g = tanh_(add(conv2d_same(x, p.w_gx), conv2d_same(h, p.w_gh)))
    c_new = add(hadamard(f, c), hadamard(i, g))
    o = sigmoid(add(conv2d_same(x, p.w_ox), conv2d_same(h, p.w_oh)))
    h_new = hadamard(o, tanh_(c_new))
    return h_new, c_new


def composite_mklstm_step(p, x, state):
    """MK-LSTM step built only from public single-kernel ops."""
    h, c, ct = state.h, state.c, state.c_wide

    i3 = sigmoid(add(conv2d_same(x, p.w_ix), conv2d_same(h, p.w_ih)))
    f3 = sigmoid(add(conv2d_same(x, p.w_fx), conv2d_same(h, p.w_fh)))
    g3 = tanh_(add(conv2d_same(x, p.w_gx), conv2d_same(h, p.w_gh)))
    c_new = add(hadamard(f3, c), hadamard(i3, g3))

    i5 = sigmoid(add(conv2d_same(x, p.wp_ix), conv2d_same(h, p.wp_ih)))
    f5 = sigmoid(add(conv2d_same(x, p.wp_fx), conv2d_same(h, p.wp_fh)))
    g5 = tanh_(add(conv2d_same(x, p.wp_gx), conv2d_same(h, p.wp_gh)))
    ct_new = add(hadamard(f5, ct), hadamard(i5, g5))

    o_pre = add(
        add(
            add(conv2d_same(x, p.w_ox), conv2d_same(h, p.w_oh)),
            conv2d_same(c_new, p.w_oc),
        ),
        add(
            add(conv2d_same(x, p.wp_ox), conv2d_same(h, p.wp_oh)),
            conv2d_same(ct_new, p.wp_oc),
        ),
    )
    o = sigmoid(o_pre)
    h_new = hadamard(o, tanh_(conv2d_same(concat_channels(c_new, ct_new), p.w_mix)))
    return h_new, c_new, ct_new
