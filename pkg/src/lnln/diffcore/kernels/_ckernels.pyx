# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the bandwidth-bound numpy kernels in ``pynative``.

Same signatures, same semantics; row-wise kernels take (rows, width)
arrays, the optimizer kernel mutates 1-d arrays in place. Results may
differ from the numpy lane by a few ulps (sequential vs pairwise
summation), which the cross-lane tests tolerate.

Transcendental-heavy forwards (softmax, sigmoid) have no compiled twin:
numpy's vectorized exp/tanh beat a scalar libm loop, so the compiled
lane reuses the numpy versions for those, the same way both lanes leave
matrix products to BLAS. The kernels here fuse multi-pass reductions
and elementwise selects, which is where a single compiled pass wins.
"""

import numpy as np

cimport cython
from libc.math cimport pow, sqrt, sqrtf
from libc.stdint cimport uint32_t, uint64_t


cdef inline double _rsqrt_d(double x) noexcept nogil:
    return 1.0 / sqrt(x)


cdef inline float _rsqrt_f(float x) noexcept nogil:
    return <float>(1.0 / sqrtf(x))


ctypedef fused floating:
    float
    double


def softmax_bwd(floating[:, ::1] g, floating[:, ::1] y):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    if floating is float:
        out_np = np.empty((n, d), dtype=np.float32)
    else:
        out_np = np.empty((n, d), dtype=np.float64)
    cdef floating[:, ::1] out = out_np
    cdef floating dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += g[i, j] * y[i, j]
            for j in range(d):
                out[i, j] = y[i, j] * (g[i, j] - dot)
    return out_np


def layer_norm_fwd(floating[:, ::1] x, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    if floating is float:
        y_np = np.empty((n, d), dtype=np.float32)
        inv_np = np.empty(n, dtype=np.float32)
    else:
        y_np = np.empty((n, d), dtype=np.float64)
        inv_np = np.empty(n, dtype=np.float64)
    cdef floating[:, ::1] y = y_np
    cdef floating[::1] inv = inv_np
    cdef floating mu, var, xc
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                xc = x[i, j] - mu
                var += xc * xc
            var /= d
            if floating is float:
                inv[i] = _rsqrt_f(<float>(var + eps))
            else:
                inv[i] = _rsqrt_d(var + eps)
            for j in range(d):
                y[i, j] = (x[i, j] - mu) * inv[i]
    return y_np, inv_np


def layer_norm_bwd(floating[:, ::1] g, floating[:, ::1] y, floating[::1] inv_std):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    if floating is float:
        out_np = np.empty((n, d), dtype=np.float32)
    else:
        out_np = np.empty((n, d), dtype=np.float64)
    cdef floating[:, ::1] out = out_np
    cdef floating gm, gy
    with nogil:
        for i in range(n):
            gm = 0.0
            gy = 0.0
            for j in range(d):
                gm += g[i, j]
                gy += g[i, j] * y[i, j]
            gm /= d
            gy /= d
            for j in range(d):
                out[i, j] = inv_std[i] * (g[i, j] - gm - y[i, j] * gy)
    return out_np


def relu_fwd(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    if floating is float:
        out_np = np.empty(n, dtype=np.float32)
    else:
        out_np = np.empty(n, dtype=np.float64)
    cdef floating[::1] out = out_np
    cdef floating zero = 0.0
    with nogil:
        for i in range(n):
            out[i] = x[i] if x[i] > zero else zero
    return out_np


def relu_bwd(floating[::1] g, floating[::1] y):
    # Select via a bit mask on the gradient's payload: gcc 11 compiles
    # a float select here to a branch that mispredicts on random
    # activation signs (8x slower), while the mask form vectorizes.
    cdef Py_ssize_t n = g.shape[0], i
    if floating is float:
        out_np = np.empty(n, dtype=np.float32)
    else:
        out_np = np.empty(n, dtype=np.float64)
    cdef floating[::1] out = out_np
    cdef floating zero = 0.0
    cdef const uint32_t* g32
    cdef uint32_t* o32
    cdef const uint64_t* g64
    cdef uint64_t* o64
    if n == 0:
        return out_np
    with nogil:
        if floating is float:
            g32 = <const uint32_t*>&g[0]
            o32 = <uint32_t*>&out[0]
            for i in range(n):
                o32[i] = g32[i] & ((<uint32_t>0) - <uint32_t>(y[i] > zero))
        else:
            g64 = <const uint64_t*>&g[0]
            o64 = <uint64_t*>&out[0]
            for i in range(n):
                o64[i] = g64[i] & ((<uint64_t>0) - <uint64_t>(y[i] > zero))
    return out_np


def sigmoid_bwd(floating[::1] g, floating[::1] y):
    cdef Py_ssize_t n = g.shape[0], i
    if floating is float:
        out_np = np.empty(n, dtype=np.float32)
    else:
        out_np = np.empty(n, dtype=np.float64)
    cdef floating[::1] out = out_np
    with nogil:
        for i in range(n):
            out[i] = g[i] * y[i] * (1.0 - y[i])
    return out_np


def adamw_step(floating[::1] p, floating[::1] g, floating[::1] m,
               floating[::1] v, long t, double lr, double beta1,
               double beta2, double eps, double weight_decay):
    cdef Py_ssize_t n = p.shape[0], i
    # constants in the data's own precision so the f32 path never pays
    # per-element double conversions
    cdef floating b1 = <floating>beta1
    cdef floating b2 = <floating>beta2
    cdef floating cb1 = <floating>(1.0 - beta1)
    cdef floating cb2 = <floating>(1.0 - beta2)
    cdef floating step_size = <floating>(lr / (1.0 - pow(beta1, t)))
    cdef floating inv_bc2 = <floating>(1.0 / (1.0 - pow(beta2, t)))
    cdef floating epsf = <floating>eps
    cdef floating decay = <floating>(1.0 - lr * weight_decay)
    cdef floating denom
    with nogil:
        for i in range(n):
            p[i] *= decay
            m[i] = b1 * m[i] + cb1 * g[i]
            v[i] = b2 * v[i] + cb2 * g[i] * g[i]
            if floating is float:
                denom = sqrtf(v[i] * inv_bc2) + epsf
            else:
                denom = sqrt(v[i] * inv_bc2) + epsf
            p[i] -= step_size * m[i] / denom
    return None
