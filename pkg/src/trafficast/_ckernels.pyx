# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: time-axis convolution (plain and over neighbour rows)
and the regression-tree split scan.

Contracts are identical to :mod:`trafficast._pykernels`.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv_time_forward(const double[:, :, ::1] x, const double[:, :, ::1] w, const double[::1] b):
    """z[m, t] = b[m % C] + sum_{r, c} w[m % C, r, c] * x[m, r, t + c]."""
    cdef Py_ssize_t M = x.shape[0], R = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t C = w.shape[0], I = w.shape[2]
    if w.shape[1] != R or b.shape[0] != C or M % C != 0 or T < I:
        raise ValueError("conv_time_forward: shape mismatch")
    cdef Py_ssize_t To = T - I + 1
    out = np.empty((M, To), dtype=np.float64)
    cdef double[:, ::1] z = out
    cdef Py_ssize_t m, r, c, t, ch
    cdef double acc, wv
    with nogil:
        for m in range(M):
            ch = m % C
            for t in range(To):
                z[m, t] = b[ch]
            for r in range(R):
                for c in range(I):
                    wv = w[ch, r, c]
                    for t in range(To):
                        z[m, t] += wv * x[m, r, t + c]
    return out


def conv_time_backward(const double[:, :, ::1] x, const double[:, :, ::1] w, const double[:, ::1] dz):
    """Gradients of the pre-activation convolution: (dx, dw, db)."""
    cdef Py_ssize_t M = x.shape[0], R = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t C = w.shape[0], I = w.shape[2]
    cdef Py_ssize_t To = T - I + 1
    if dz.shape[0] != M or dz.shape[1] != To or M % C != 0:
        raise ValueError("conv_time_backward: shape mismatch")
    dx_a = np.zeros((M, R, T), dtype=np.float64)
    dw_a = np.zeros((C, R, I), dtype=np.float64)
    db_a = np.zeros(C, dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_a
    cdef double[:, :, ::1] dw = dw_a
    cdef double[::1] db = db_a
    cdef Py_ssize_t m, r, c, t, ch
    cdef double acc, wv, g
    with nogil:
        for m in range(M):
            ch = m % C
            for t in range(To):
                db[ch] += dz[m, t]
            for r in range(R):
                for c in range(I):
                    wv = w[ch, r, c]
                    acc = 0.0
                    for t in range(To):
                        g = dz[m, t]
                        acc = acc + g * x[m, r, t + c]
                        dx[m, r, t + c] += wv * g
                    dw[ch, r, c] += acc
    return dx_a, dw_a, db_a


def best_split(const double[:, ::1] xs, const double[:, ::1] ys, Py_ssize_t min_leaf):
    """Best variance-reduction split over presorted feature rows.

    Row f of ``xs`` is sorted ascending with ``ys`` aligned. A split after
    position p sends samples 0..p left. Returns (feature, p, gain) with
    feature == -1 when no admissible split exists. Ties keep the first
    (lowest feature, then lowest position).
    """
    cdef Py_ssize_t F = xs.shape[0], n = xs.shape[1]
    cdef Py_ssize_t f, p, best_f = -1, best_p = -1
    cdef double best_gain = -1.0, total, left, right, gain, nl, nr, base
    if ys.shape[0] != F or ys.shape[1] != n:
        raise ValueError("best_split: shape mismatch")
    if n < 2 * min_leaf:
        return -1, -1, 0.0
    with nogil:
        for f in range(F):
            total = 0.0
            for p in range(n):
                total = total + ys[f, p]
            base = total * total / n
            left = 0.0
            for p in range(n - 1):
                left = left + ys[f, p]
                if p + 1 < min_leaf or n - p - 1 < min_leaf:
                    continue
                if xs[f, p] == xs[f, p + 1]:
                    continue
                right = total - left
                nl = p + 1
                nr = n - p - 1
                gain = left * left / nl + right * right / nr - base
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_p = p
    if best_f < 0:
        return -1, -1, 0.0
    return int(best_f), int(best_p), float(best_gain)


def graph_conv_forward(const double[:, :, ::1] s, const cnp.int64_t[:, ::1] nbr,
                       const double[:, :, ::1] w, const double[::1] b):
    """Convolution over neighbour-gathered rows without materialising the gather.

    z[q, n, t] = b[n % C] + sum_{r, c} w[n % C, r, c] * s[q, nbr[n, r], t + c].
    """
    cdef Py_ssize_t B = s.shape[0], N = s.shape[1], T = s.shape[2]
    cdef Py_ssize_t R = nbr.shape[1], C = w.shape[0], I = w.shape[2]
    if nbr.shape[0] != N or w.shape[1] != R or b.shape[0] != C or N % C != 0 or T < I:
        raise ValueError("graph_conv_forward: shape mismatch")
    cdef Py_ssize_t To = T - I + 1
    out = np.empty((B, N, To), dtype=np.float64)
    cdef double[:, :, ::1] z = out
    cdef Py_ssize_t q, n, r, c, t, ch, j
    cdef double wv
    cdef double* zp
    cdef const double* sp
    with nogil:
        for q in range(B):
            for n in range(N):
                ch = n % C
                zp = &z[q, n, 0]
                for t in range(To):
                    zp[t] = b[ch]
                for r in range(R):
                    j = nbr[n, r]
                    for c in range(I):
                        wv = w[ch, r, c]
                        sp = &s[q, j, c]
                        for t in range(To):
                            zp[t] += wv * sp[t]
    return out


def graph_conv_backward(const double[:, :, ::1] s, const cnp.int64_t[:, ::1] nbr,
                        const double[:, :, ::1] w, const double[:, :, ::1] dz):
    """Gradients of :func:`graph_conv_forward`: (ds, dw, db)."""
    cdef Py_ssize_t B = s.shape[0], N = s.shape[1], T = s.shape[2]
    cdef Py_ssize_t R = nbr.shape[1], C = w.shape[0], I = w.shape[2]
    cdef Py_ssize_t To = T - I + 1
    if dz.shape[0] != B or dz.shape[1] != N or dz.shape[2] != To or N % C != 0:
        raise ValueError("graph_conv_backward: shape mismatch")
    ds_a = np.zeros((B, N, T), dtype=np.float64)
    dw_a = np.zeros((C, R, I), dtype=np.float64)
    db_a = np.zeros(C, dtype=np.float64)
    cdef double[:, :, ::1] ds = ds_a
    cdef double[:, :, ::1] dw = dw_a
    cdef double[::1] db = db_a
    cdef Py_ssize_t q, n, r, c, t, ch, j
    cdef double wv, acc
    cdef const double* gp
    cdef const double* sp
    cdef double* dsp
    with nogil:
        for q in range(B):
            for n in range(N):
                ch = n % C
                gp = &dz[q, n, 0]
                for t in range(To):
                    db[ch] += gp[t]
                for r in range(R):
                    j = nbr[n, r]
                    for c in range(I):
                        wv = w[ch, r, c]
                        sp = &s[q, j, c]
                        dsp = &ds[q, j, c]
                        acc = 0.0
                        for t in range(To):
                            acc = acc + gp[t] * sp[t]
                        for t in range(To):
                            dsp[t] += wv * gp[t]
                        dw[ch, r, c] += acc
    return ds_a, dw_a, db_a
