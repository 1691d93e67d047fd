# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quantizer kernels; see ``_pykernels`` for the reference versions."""

import numpy as np

from libc.math cimport rint, log, INFINITY

cdef double KL_FLOOR = 1e-10


cdef inline double _code(double x, double delta, double b, double qmin, double qmax) noexcept nogil:
    cdef double c = rint(x * delta - b)
    if c < qmin:
        c = qmin
    if c > qmax:
        c = qmax
    return c


def quantize_codes(x, double delta, double b, double qmin, double qmax):
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    out = np.empty(xs.shape[0], dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xs.shape[0]):
            o[i] = <long long>_code(xs[i], delta, b, qmin, qmax)
    return out.reshape(np.shape(x))


def fake_quant(x, double delta, double b, double qmin, double qmax, double lo, double hi):
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = xs.shape[0]
    out = np.empty(n, dtype=np.float64)
    mask = np.empty(n, dtype=np.bool_)
    cdef double[::1] o = out
    cdef unsigned char[::1] m = mask.view(np.uint8)
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(n):
            v = xs[i]
            o[i] = (_code(v, delta, b, qmin, qmax) + b) / delta
            m[i] = 1 if (v >= lo and v <= hi) else 0
    shape = np.shape(x)
    return out.reshape(shape), mask.reshape(shape)


def mse_sweep(values, lows, highs, int k):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    cdef const double[::1] ls = np.ascontiguousarray(lows, dtype=np.float64)
    cdef const double[::1] hs = np.ascontiguousarray(highs, dtype=np.float64)
    cdef Py_ssize_t nc = ls.shape[0], n = v.shape[0], i, j
    out = np.empty(nc, dtype=np.float64)
    cdef double[::1] o = out
    cdef double levels = 2.0 ** k - 1.0
    cdef double half = 2.0 ** (k - 1)
    cdef double delta, b, acc, err
    with nogil:
        for i in range(nc):
            delta = levels / (hs[i] - ls[i])
            b = ls[i] * delta + half
            acc = 0.0
            for j in range(n):
                err = (_code(v[j], delta, b, -half, half - 1.0) + b) / delta - v[j]
                acc += err * err
            o[i] = acc / n
    return out


def kl_sweep(hist, starts, stops, int nlevels):
    cdef const double[::1] h = np.ascontiguousarray(hist, dtype=np.float64)
    cdef const long long[::1] ss = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const long long[::1] es = np.ascontiguousarray(stops, dtype=np.int64)
    cdef Py_ssize_t nb = h.shape[0], nc = ss.shape[0]
    out = np.empty(nc, dtype=np.float64)
    cdef double[::1] o = out
    p_buf = np.empty(nb, dtype=np.float64)
    q_buf = np.empty(nb, dtype=np.float64)
    cdef double[::1] p = p_buf
    cdef double[::1] q = q_buf
    cdef Py_ssize_t c, i, j, s, e, n, a, z, cnt
    cdef double below, above, psum, qsum, gsum, kl, pi, qi
    with nogil:
        for c in range(nc):
            s = ss[c]
            e = es[c]
            n = e - s
            below = 0.0
            for i in range(s):
                below += h[i]
            above = 0.0
            for i in range(e, nb):
                above += h[i]
            for i in range(n):
                p[i] = h[s + i]
            p[0] += below
            p[n - 1] += above
            for j in range(nlevels):
                a = (j * n) // nlevels
                z = ((j + 1) * n) // nlevels
                cnt = 0
                gsum = 0.0
                for i in range(a, z):
                    if p[i] != 0:
                        cnt += 1
                    gsum += h[s + i]
                for i in range(a, z):
                    q[i] = gsum / cnt if (cnt and p[i] != 0) else 0.0
            psum = 0.0
            qsum = 0.0
            for i in range(n):
                psum += p[i]
                qsum += q[i]
            if qsum <= 0:
                o[c] = INFINITY
                continue
            kl = 0.0
            for i in range(n):
                pi = p[i] / psum
                if pi > 0:
                    qi = q[i] / qsum
                    if qi < KL_FLOOR:
                        qi = KL_FLOOR
                    kl += pi * log(pi / qi)
            o[c] = kl
    return out
