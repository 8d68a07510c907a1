"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
from __future__ import annotations

import numpy as np


def _check_conv(x, w, b=None):
    M, R, T = x.shape
    C, Rw, I = w.shape
    if Rw != R or M % C or T < I or (b is not None and b.shape != (C,)):
        raise ValueError("conv_time: shape mismatch")
    return M, R, T, C, I


def conv_time_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z[m, t] = b[m % C] + sum_{r, c} w[m % C, r, c] * x[m, r, t + c]."""
    M, R, T, C, I = _check_conv(x, w, b)
    To = T - I + 1
    xb = x.reshape(M // C, C, R, T)
    z = np.broadcast_to(b[None, :, None], (M // C, C, To)).copy()
    for c in range(I):
        z += np.einsum("bcrt,cr->bct", xb[..., c:c + To], w[:, :, c])
    return z.reshape(M, To)


def conv_time_backward(x: np.ndarray, w: np.ndarray, dz: np.ndarray):
    M, R, T, C, I = _check_conv(x, w)
    To = T - I + 1
    if dz.shape != (M, To):
        raise ValueError("conv_time_backward: shape mismatch")
    xb = x.reshape(M // C, C, R, T)
    dzb = dz.reshape(M // C, C, To)
    dx = np.zeros_like(xb)
    dw = np.empty_like(w)
    for c in range(I):
        dw[:, :, c] = np.einsum("bct,bcrt->cr", dzb, xb[..., c:c + To])
        dx[..., c:c + To] += dzb[:, :, None, :] * w[None, :, :, c, None]
    db = dzb.sum(axis=(0, 2))
    return dx.reshape(M, R, T), dw, db


def graph_conv_forward(s: np.ndarray, nbr: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z[q, n, t] = b[n % C] + sum_{r, c} w[n % C, r, c] * s[q, nbr[n, r], t + c]."""
    B, N, T = s.shape
    if nbr.shape[0] != N:
        raise ValueError("graph_conv_forward: shape mismatch")
    z = conv_time_forward(s[:, nbr, :].reshape(B * N, nbr.shape[1], T), w, b)
    return z.reshape(B, N, -1)


def graph_conv_backward(s: np.ndarray, nbr: np.ndarray, w: np.ndarray, dz: np.ndarray):
    B, N, T = s.shape
    R = nbr.shape[1]
    dg, dw, db = conv_time_backward(s[:, nbr, :].reshape(B * N, R, T), w, dz.reshape(B * N, -1))
    ds = np.zeros_like(s)
    dg = dg.reshape(B, N, R, T)
    for r in range(R):
        np.add.at(ds, (slice(None), nbr[:, r]), dg[:, :, r])
    return ds, dw, db


def best_split(xs: np.ndarray, ys: np.ndarray, min_leaf: int):
    """See ``_ckernels.best_split``."""
    F, n = xs.shape
    if ys.shape != (F, n):
        raise ValueError("best_split: shape mismatch")
    if n < 2 * min_leaf:
        return -1, -1, 0.0
    csum = np.cumsum(ys, axis=1)
    total = csum[:, -1:]
    left = csum[:, :-1]
    right = total - left
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    gain = left * left / nl + right * right / nr - total * total / n
    valid = (xs[:, :-1] != xs[:, 1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, p = divmod(flat, n - 1)
    if not np.isfinite(gain[f, p]):
        return -1, -1, 0.0
    # argmax over the flattened array already prefers the lowest feature, then lowest position,
    # but the compiled scan starts from gain -1.0, so mirror that floor
    if gain[f, p] <= -1.0:
        return -1, -1, 0.0
    return f, p, float(gain[f, p])
