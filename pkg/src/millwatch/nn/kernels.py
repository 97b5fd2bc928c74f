"""Numba inner loops for the layer forward/backward passes.

Summation-order policy: every forward contraction accumulates its terms
sequentially in ascending index order of the contracted axes — (input
channel, kernel tap) for convolution, input dimension for linear layers,
with the bias added last. Naive reference loops written in the same order
therefore reproduce the outputs bit for bit. Backward passes only have to
satisfy finite-difference tolerances and use whatever order is convenient.

All kernels are single-threaded and compiled without fastmath, so results
are deterministic and independent of BLAS/thread configuration.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv1d_forward(x, w):
    """x: (B, C_in, L), w: (C_out, C_in, K) -> (B, C_out, L), zero 'same' padding."""
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    off = (K - 1) // 2
    out = np.zeros((B, Cout, L))
    for b in range(B):
        for c in range(Cout):
            for j in range(Cin):
                for a in range(K):
                    s = a - off
                    t0 = max(0, -s)
                    t1 = min(L, L - s)
                    wv = w[c, j, a]
                    for t in range(t0, t1):
                        out[b, c, t] += wv * x[b, j, t + s]
    return out


@njit(cache=True)
def conv1d_backward(x, w, g):
    """Gradients of sum(g * conv1d_forward(x, w)) w.r.t. x and w."""
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    off = (K - 1) // 2
    gx = np.zeros((B, Cin, L))
    gw = np.zeros((Cout, Cin, K))
    for b in range(B):
        for c in range(Cout):
            for j in range(Cin):
                for a in range(K):
                    s = a - off
                    t0 = max(0, -s)
                    t1 = min(L, L - s)
                    wv = w[c, j, a]
                    acc = 0.0
                    for t in range(t0, t1):
                        gx[b, j, t + s] += wv * g[b, c, t]
                        acc += x[b, j, t + s] * g[b, c, t]
                    gw[c, j, a] += acc
    return gx, gw


@njit(cache=True)
def linear_forward(x, w, bias):
    """x: (B, D_in), w: (D_in, D_out), bias: (D_out,) -> x @ w + bias."""
    B, Din = x.shape
    Dout = w.shape[1]
    out = np.zeros((B, Dout))
    for b in range(B):
        for d in range(Din):
            xv = x[b, d]
            for o in range(Dout):
                out[b, o] += xv * w[d, o]
        for o in range(Dout):
            out[b, o] += bias[o]
    return out


@njit(cache=True)
def linear_backward(x, w, g):
    """Gradients of sum(g * (x @ w + b)) w.r.t. x, w, b."""
    B, Din = x.shape
    Dout = w.shape[1]
    gx = np.zeros((B, Din))
    gw = np.zeros((Din, Dout))
    gb = np.zeros(Dout)
    for b in range(B):
        for d in range(Din):
            acc = 0.0
            for o in range(Dout):
                acc += g[b, o] * w[d, o]
            gx[b, d] = acc
        for d in range(Din):
            xv = x[b, d]
            for o in range(Dout):
                gw[d, o] += xv * g[b, o]
        for o in range(Dout):
            gb[o] += g[b, o]
    return gx, gw, gb


def warmup():
    """Trigger JIT compilation of all kernels on tiny inputs."""
    x = np.zeros((1, 1, 4))
    w = np.zeros((1, 1, 3))
    conv1d_forward(x, w)
    conv1d_backward(x, w, np.zeros((1, 1, 4)))
    x2 = np.zeros((1, 2))
    w2 = np.zeros((2, 3))
    linear_forward(x2, w2, np.zeros(3))
    linear_backward(x2, w2, np.zeros((1, 3)))
