"""Brute-force reference implementations used by the tests.

Each oracle follows the element-wise definition with explicit index loops
and shares no code with the package.
"""
import itertools
import math

import numpy as np


def unfold_loops(A, n):
    """Place A(i_1..i_N) at (i_n, j) with j = sum_{k != n} i_k prod_{m<k, m != n} I_m (0-based)."""
    shape = A.shape
    ax = n - 1
    cols = math.prod(shape) // shape[ax]
    M = np.zeros((shape[ax], cols))
    for idx in itertools.product(*[range(s) for s in shape]):
        j = 0
        for k in range(len(shape)):
            if k == ax:
                continue
            stride = 1
            for m in range(k):
                if m != ax:
                    stride *= shape[m]
            j += idx[k] * stride
        M[idx[ax], j] = A[idx]
    return M


def mode_product_loops(A, U, n):
    ax = n - 1
    out_shape = list(A.shape)
    out_shape[ax] = U.shape[0]
    out = np.zeros(out_shape)
    for idx in itertools.product(*[range(s) for s in out_shape]):
        total = 0.0
        for i in range(A.shape[ax]):
            src = list(idx)
            src[ax] = i
            total += A[tuple(src)] * U[idx[ax], i]
        out[idx] = total
    return out


def tucker_loops(G, factors):
    out_shape = [U.shape[0] for U in factors]
    out = np.zeros(out_shape)
    for oidx in itertools.product(*[range(s) for s in out_shape]):
        total = 0.0
        for gidx in itertools.product(*[range(s) for s in G.shape]):
            w = G[gidx]
            for U, o, g in zip(factors, oidx, gidx):
                w *= U[o, g]
            total += w
        out[oidx] = total
    return out


def dense_forward(layers, x):
    """Plain numpy forward for a list of (W, b, activation, omega0)."""
    h = np.asarray(x, dtype=np.float64)
    for W, b, act, w0 in layers:
        h = h @ W + b
        if act == "sine":
            h = np.sin(w0 * h)
        elif act == "relu":
            h = np.maximum(h, 0.0)
        elif act == "tanh":
            h = np.tanh(h)
    return h


def net_layers(net):
    return [(l.weight, l.bias, l.activation, l.omega0) for l in net.layers]


def deeponet_loops(branch_layers, trunk_layers, fibers, ys):
    """out[q, j] = sum_p b_p(fiber q) t_p(y_j), one forward per fiber and per query."""
    out = np.zeros((fibers.shape[0], len(ys)))
    for q in range(fibers.shape[0]):
        b = dense_forward(branch_layers, fibers[q:q + 1])[0]
        for j, y in enumerate(ys):
            t = dense_forward(trunk_layers, np.array([[y]]))[0]
            s = 0.0
            for p in range(b.size):
                s += b[p] * t[p]
            out[q, j] = s
    return out


def ssim_direct(a, b, data_range=1.0, win=11, sigma=1.5):
    """SSIM by explicit window loops (valid region, Gaussian weights)."""
    r = np.arange(win) - (win - 1) / 2
    g1 = np.exp(-r ** 2 / (2 * sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            pa = a[i:i + win, j:j + win]
            pb = b[i:i + win, j:j + win]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))
