# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core: direct-loop convolutions and the GRU time loop.

Signatures mirror ``lipgcn.kernels.numpy_backend`` exactly; outputs agree with
the fallback up to floating-point summation order. Convolutions parallelize
over the batch with a static schedule and thread-local kernel-gradient
buffers merged in thread order, so results are bitwise reproducible for a
fixed thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport parallel, prange, threadid
from libc.math cimport exp, tanh

cimport openmp

cnp.import_array()


cdef inline double _sig(double v) noexcept nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a > b else b


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a < b else b


# ---------------------------------------------------------------------------
# conv1d, zero same-padding, dilation


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] k, Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t O = k.shape[0], K = k.shape[2]
    cdef Py_ssize_t pad = dilation * (K // 2)
    out_arr = np.zeros((B, O, T), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, j, t, lo, hi, off
    cdef double kv
    with nogil:
        for b in prange(B, schedule="static"):
            for o in range(O):
                for c in range(C):
                    for j in range(K):
                        kv = k[o, c, j]
                        if kv == 0.0:
                            continue
                        off = j * dilation - pad
                        lo = _imax(0, -off)
                        hi = _imin(T, T - off)
                        for t in range(lo, hi):
                            out[b, o, t] += kv * x[b, c, t + off]
    return out_arr


def conv1d_backward(double[:, :, ::1] g, double[:, :, ::1] x,
                    double[:, :, ::1] k, Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t O = k.shape[0], K = k.shape[2]
    cdef Py_ssize_t pad = dilation * (K // 2)
    cdef int n_threads = openmp.omp_get_max_threads()
    gx_arr = np.zeros((B, C, T), dtype=np.float64)
    gk_local_arr = np.zeros((n_threads, O, C, K), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gk_local = gk_local_arr
    cdef Py_ssize_t b, o, c, j, t, lo, hi, off
    cdef int tid
    cdef double kv, acc
    with nogil, parallel():
        tid = threadid()
        for b in prange(B, schedule="static"):
            for o in range(O):
                for c in range(C):
                    for j in range(K):
                        off = j * dilation - pad
                        lo = _imax(0, -off)
                        hi = _imin(T, T - off)
                        kv = k[o, c, j]
                        acc = 0.0
                        for t in range(lo, hi):
                            acc = acc + g[b, o, t] * x[b, c, t + off]
                            gx[b, c, t + off] += kv * g[b, o, t]
                        gk_local[tid, o, c, j] += acc
    return gx_arr, gk_local_arr.sum(axis=0)


# ---------------------------------------------------------------------------
# conv2d, padding K//2, arbitrary stride


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] k, Py_ssize_t stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = k.shape[0], KH = k.shape[2], KW = k.shape[3]
    cdef Py_ssize_t ph = KH // 2, pw = KW // 2
    cdef Py_ssize_t Ho = (H + 2 * ph - KH) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pw - KW) // stride + 1
    out_arr = np.zeros((B, O, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, i, j, oh, ow, ih, offh, offw
    cdef Py_ssize_t oh_lo, oh_hi, ow_lo, ow_hi
    cdef double kv
    with nogil:
        for b in prange(B, schedule="static"):
            for o in range(O):
                for c in range(C):
                    for i in range(KH):
                        offh = i - ph
                        oh_lo = 0 if offh >= 0 else (-offh + stride - 1) // stride
                        oh_hi = 0 if offh > H - 1 else _imin(Ho, (H - 1 - offh) // stride + 1)
                        for j in range(KW):
                            kv = k[o, c, i, j]
                            if kv == 0.0:
                                continue
                            offw = j - pw
                            ow_lo = 0 if offw >= 0 else (-offw + stride - 1) // stride
                            ow_hi = 0 if offw > W - 1 else _imin(Wo, (W - 1 - offw) // stride + 1)
                            for oh in range(oh_lo, oh_hi):
                                ih = oh * stride + offh
                                for ow in range(ow_lo, ow_hi):
                                    out[b, o, oh, ow] += kv * x[b, c, ih, ow * stride + offw]
    return out_arr


def conv2d_backward(double[:, :, :, ::1] g, double[:, :, :, ::1] x,
                    double[:, :, :, ::1] k, Py_ssize_t stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = k.shape[0], KH = k.shape[2], KW = k.shape[3]
    cdef Py_ssize_t ph = KH // 2, pw = KW // 2
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    cdef int n_threads = openmp.omp_get_max_threads()
    gx_arr = np.zeros((B, C, H, W), dtype=np.float64)
    gk_local_arr = np.zeros((n_threads, O, C, KH, KW), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, :, ::1] gk_local = gk_local_arr
    cdef Py_ssize_t b, o, c, i, j, oh, ow, ih, iw, offh, offw
    cdef Py_ssize_t oh_lo, oh_hi, ow_lo, ow_hi
    cdef int tid
    cdef double kv, acc, gv
    with nogil, parallel():
        tid = threadid()
        for b in prange(B, schedule="static"):
            for o in range(O):
                for c in range(C):
                    for i in range(KH):
                        offh = i - ph
                        oh_lo = 0 if offh >= 0 else (-offh + stride - 1) // stride
                        oh_hi = 0 if offh > H - 1 else _imin(Ho, (H - 1 - offh) // stride + 1)
                        for j in range(KW):
                            offw = j - pw
                            ow_lo = 0 if offw >= 0 else (-offw + stride - 1) // stride
                            ow_hi = 0 if offw > W - 1 else _imin(Wo, (W - 1 - offw) // stride + 1)
                            kv = k[o, c, i, j]
                            acc = 0.0
                            for oh in range(oh_lo, oh_hi):
                                ih = oh * stride + offh
                                for ow in range(ow_lo, ow_hi):
                                    iw = ow * stride + offw
                                    gv = g[b, o, oh, ow]
                                    acc = acc + gv * x[b, c, ih, iw]
                                    gx[b, c, ih, iw] += kv * gv
                            gk_local[tid, o, c, i, j] += acc
    return gx_arr, gk_local_arr.sum(axis=0)


# ---------------------------------------------------------------------------
# conv3d, stride 1, zero same-padding in all three dims


def conv3d_forward(double[:, :, :, :, ::1] x, double[:, :, :, :, ::1] k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t T = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t O = k.shape[0], KT = k.shape[2], KH = k.shape[3], KW = k.shape[4]
    cdef Py_ssize_t pt = KT // 2, ph = KH // 2, pw = KW // 2
    out_arr = np.zeros((B, O, T, H, W), dtype=np.float64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, dt, dh, dw, t, h, w
    cdef Py_ssize_t offt, offh, offw, tlo, thi, hlo, hhi, wlo, whi
    cdef double kv
    with nogil:
        for b in prange(B, schedule="static"):
            for o in range(O):
                for c in range(C):
                    for dt in range(KT):
                        offt = dt - pt
                        tlo = _imax(0, -offt)
                        thi = _imin(T, T - offt)
                        for dh in range(KH):
                            offh = dh - ph
                            hlo = _imax(0, -offh)
                            hhi = _imin(H, H - offh)
                            for dw in range(KW):
                                kv = k[o, c, dt, dh, dw]
                                if kv == 0.0:
                                    continue
                                offw = dw - pw
                                wlo = _imax(0, -offw)
                                whi = _imin(W, W - offw)
                                for t in range(tlo, thi):
                                    for h in range(hlo, hhi):
                                        for w in range(wlo, whi):
                                            out[b, o, t, h, w] += kv * x[b, c, t + offt, h + offh, w + offw]
    return out_arr


def conv3d_backward(double[:, :, :, :, ::1] g, double[:, :, :, :, ::1] x,
                    double[:, :, :, :, ::1] k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t T = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t O = k.shape[0], KT = k.shape[2], KH = k.shape[3], KW = k.shape[4]
    cdef Py_ssize_t pt = KT // 2, ph = KH // 2, pw = KW // 2
    cdef int n_threads = openmp.omp_get_max_threads()
    gx_arr = np.zeros((B, C, T, H, W), dtype=np.float64)
    gk_local_arr = np.zeros((n_threads, O, C, KT, KH, KW), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, :, :, ::1] gk_local = gk_local_arr
    cdef Py_ssize_t b, o, c, dt, dh, dw, t, h, w
    cdef Py_ssize_t offt, offh, offw, tlo, thi, hlo, hhi, wlo, whi
    cdef int tid
    cdef double kv, acc, gv
    with nogil, parallel():
        tid = threadid()
        for b in prange(B, schedule="static"):
            for o in range(O):
                for c in range(C):
                    for dt in range(KT):
                        offt = dt - pt
                        tlo = _imax(0, -offt)
                        thi = _imin(T, T - offt)
                        for dh in range(KH):
                            offh = dh - ph
                            hlo = _imax(0, -offh)
                            hhi = _imin(H, H - offh)
                            for dw in range(KW):
                                offw = dw - pw
                                wlo = _imax(0, -offw)
                                whi = _imin(W, W - offw)
                                kv = k[o, c, dt, dh, dw]
                                acc = 0.0
                                for t in range(tlo, thi):
                                    for h in range(hlo, hhi):
                                        for w in range(wlo, whi):
                                            gv = g[b, o, t, h, w]
                                            acc = acc + gv * x[b, c, t + offt, h + offh, w + offw]
                                            gx[b, c, t + offt, h + offh, w + offw] += kv * gv
                                gk_local[tid, o, c, dt, dh, dw] += acc
    return gx_arr, gk_local_arr.sum(axis=0)


# ---------------------------------------------------------------------------
# GRU over a full sequence, zero initial state; gate layout [reset|update|cand]


def gru_forward(double[:, :, ::1] x, double[:, ::1] wx, double[:, ::1] wh,
                double[::1] bx, double[::1] bh):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef Py_ssize_t H = wh.shape[0], G = 3 * H
    xg_arr = np.empty((B, T, G), dtype=np.float64)
    hseq_arr = np.zeros((B, T, H), dtype=np.float64)
    r_arr = np.empty((B, T, H), dtype=np.float64)
    z_arr = np.empty((B, T, H), dtype=np.float64)
    n_arr = np.empty((B, T, H), dtype=np.float64)
    hgn_arr = np.empty((B, T, H), dtype=np.float64)
    hprev_arr = np.empty((B, T, H), dtype=np.float64)
    cdef double[:, :, ::1] xg = xg_arr
    cdef double[:, :, ::1] hseq = hseq_arr
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] n = n_arr
    cdef double[:, :, ::1] hgn = hgn_arr
    cdef double[:, :, ::1] hprev = hprev_arr
    h_arr = np.zeros((B, H), dtype=np.float64)
    hg_arr = np.empty((B, G), dtype=np.float64)
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] hg = hg_arr
    cdef Py_ssize_t b, t, d, i, j
    cdef double acc, rv, zv, nv
    with nogil:
        # input projection xg = x @ wx + bx
        for b in range(B):
            for t in range(T):
                for j in range(G):
                    acc = bx[j]
                    for d in range(D):
                        acc += x[b, t, d] * wx[d, j]
                    xg[b, t, j] = acc
        for t in range(T):
            for b in range(B):
                for j in range(G):
                    acc = bh[j]
                    for i in range(H):
                        acc += h[b, i] * wh[i, j]
                    hg[b, j] = acc
                for i in range(H):
                    rv = _sig(xg[b, t, i] + hg[b, i])
                    zv = _sig(xg[b, t, H + i] + hg[b, H + i])
                    nv = tanh(xg[b, t, 2 * H + i] + rv * hg[b, 2 * H + i])
                    r[b, t, i] = rv
                    z[b, t, i] = zv
                    n[b, t, i] = nv
                    hgn[b, t, i] = hg[b, 2 * H + i]
                    hprev[b, t, i] = h[b, i]
                    h[b, i] = (1.0 - zv) * nv + zv * h[b, i]
                    hseq[b, t, i] = h[b, i]
    return hseq_arr, (r_arr, z_arr, n_arr, hgn_arr, hprev_arr)


def gru_backward(double[:, :, ::1] g, double[:, :, ::1] x, double[:, ::1] wx,
                 double[:, ::1] wh, cache):
    r_arr, z_arr, n_arr, hgn_arr, hprev_arr = cache
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] n = n_arr
    cdef double[:, :, ::1] hgn = hgn_arr
    cdef double[:, :, ::1] hprev = hprev_arr
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef Py_ssize_t H = wh.shape[0], G = 3 * H
    gx_arr = np.zeros((B, T, D), dtype=np.float64)
    gwx_arr = np.zeros((D, G), dtype=np.float64)
    gwh_arr = np.zeros((H, G), dtype=np.float64)
    gbx_arr = np.zeros(G, dtype=np.float64)
    gbh_arr = np.zeros(G, dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] gwx = gwx_arr
    cdef double[:, ::1] gwh = gwh_arr
    cdef double[::1] gbx = gbx_arr
    cdef double[::1] gbh = gbh_arr
    dxg_arr = np.zeros((B, T, G), dtype=np.float64)
    gh_arr = np.zeros((B, H), dtype=np.float64)
    dhg_arr = np.empty((B, G), dtype=np.float64)
    cdef double[:, :, ::1] dxg = dxg_arr
    cdef double[:, ::1] gh = gh_arr
    cdef double[:, ::1] dhg = dhg_arr
    cdef Py_ssize_t b, t, d, i, j
    cdef double ght, dz, dn, dr, rv, zv, nv, acc
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for i in range(H):
                    ght = g[b, t, i] + gh[b, i]
                    rv = r[b, t, i]
                    zv = z[b, t, i]
                    nv = n[b, t, i]
                    dz = ght * (hprev[b, t, i] - nv) * zv * (1.0 - zv)
                    dn = ght * (1.0 - zv) * (1.0 - nv * nv)
                    dr = dn * hgn[b, t, i] * rv * (1.0 - rv)
                    dxg[b, t, i] = dr
                    dxg[b, t, H + i] = dz
                    dxg[b, t, 2 * H + i] = dn
                    dhg[b, i] = dr
                    dhg[b, H + i] = dz
                    dhg[b, 2 * H + i] = dn * rv
                    gh[b, i] = ght * zv
                for j in range(G):
                    acc = dhg[b, j]
                    gbh[j] += acc
                    for i in range(H):
                        gwh[i, j] += hprev[b, t, i] * acc
                        gh[b, i] += acc * wh[i, j]
        # input-side grads from the accumulated gate deltas
        for b in range(B):
            for t in range(T):
                for j in range(G):
                    acc = dxg[b, t, j]
                    gbx[j] += acc
                    for d in range(D):
                        gwx[d, j] += x[b, t, d] * acc
                        gx[b, t, d] += acc * wx[d, j]
    return gx_arr, gwx_arr, gwh_arr, gbx_arr, gbh_arr
