"""Vectorized numpy kernels: the pure-Python fallback for the compiled core.

All kernels take and return C-contiguous float64 arrays. Shape and parity
validation happens one level up in ``lipgcn.numerics.ops``; these functions
assume valid inputs. Convolutions use zero same-padding (stride-1 variants
preserve length), matching the compiled backend bit-for-bit up to summation
order.
"""

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# dilated temporal convolution, x [B,C,T] * k [O,C,K] -> [B,O,T]


def conv1d_forward(x, k, dilation):
    B, C, T = x.shape
    O, _, K = k.shape
    pad = dilation * (K // 2)
    xp = np.zeros((B, C, T + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + T] = x
    out = np.zeros((B, O, T), dtype=np.float64)
    for j in range(K):
        off = j * dilation
        out += np.matmul(k[:, :, j], xp[:, :, off:off + T])
    return out


def conv1d_backward(g, x, k, dilation):
    B, C, T = x.shape
    O, _, K = k.shape
    pad = dilation * (K // 2)
    xp = np.zeros((B, C, T + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + T] = x
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for j in range(K):
        off = j * dilation
        sl = xp[:, :, off:off + T]
        gk[:, :, j] = np.tensordot(g, sl, axes=([0, 2], [0, 2]))
        gxp[:, :, off:off + T] += np.matmul(k[:, :, j].T, g)
    return np.ascontiguousarray(gxp[:, :, pad:pad + T]), gk


# ---------------------------------------------------------------------------
# strided spatial convolution, x [B,C,H,W] * k [O,C,KH,KW] -> [B,O,Ho,Wo]
# padding is KH//2, KW//2; output extents are floor((L+2p-K)/s)+1.


def conv2d_forward(x, k, stride):
    B, C, H, W = x.shape
    O, _, KH, KW = k.shape
    ph, pw = KH // 2, KW // 2
    Ho = (H + 2 * ph - KH) // stride + 1
    Wo = (W + 2 * pw - KW) // stride + 1
    xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + H, pw:pw + W] = x
    out = np.zeros((B, O, Ho, Wo), dtype=np.float64)
    for i in range(KH):
        for j in range(KW):
            sl = xp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                    j:j + stride * (Wo - 1) + 1:stride]
            sl2 = np.ascontiguousarray(sl).reshape(B, C, Ho * Wo)
            out += np.matmul(k[:, :, i, j], sl2).reshape(B, O, Ho, Wo)
    return out


def conv2d_backward(g, x, k, stride):
    B, C, H, W = x.shape
    O, _, KH, KW = k.shape
    ph, pw = KH // 2, KW // 2
    Ho, Wo = g.shape[2], g.shape[3]
    xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + H, pw:pw + W] = x
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    g2 = g.reshape(B, O, Ho * Wo)
    for i in range(KH):
        for j in range(KW):
            rows = slice(i, i + stride * (Ho - 1) + 1, stride)
            cols = slice(j, j + stride * (Wo - 1) + 1, stride)
            sl = xp[:, :, rows, cols]
            gk[:, :, i, j] = np.tensordot(g, sl, axes=([0, 2, 3], [0, 2, 3]))
            gxp[:, :, rows, cols] += np.matmul(k[:, :, i, j].T, g2).reshape(B, C, Ho, Wo)
    return np.ascontiguousarray(gxp[:, :, ph:ph + H, pw:pw + W]), gk


# ---------------------------------------------------------------------------
# spatio-temporal convolution, x [B,C,T,H,W] * k [O,C,KT,KH,KW], stride 1,
# zero same-padding in all three dims. im2col + one GEMM.


def _conv3d_cols(x, kshape):
    B, C, T, H, W = x.shape
    KT, KH, KW = kshape
    pt, ph, pw = KT // 2, KH // 2, KW // 2
    xp = np.zeros((B, C, T + 2 * pt, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, :, pt:pt + T, ph:ph + H, pw:pw + W] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (KT, KH, KW), axis=(2, 3, 4))
    # win: [B,C,T,H,W,KT,KH,KW] -> cols [B*T*H*W, C*KT*KH*KW]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * T * H * W, C * KT * KH * KW)
    return np.ascontiguousarray(cols)


def conv3d_forward(x, k):
    B, C, T, H, W = x.shape
    O = k.shape[0]
    cols = _conv3d_cols(x, k.shape[2:])
    out = cols @ k.reshape(O, -1).T
    return np.ascontiguousarray(out.reshape(B, T, H, W, O).transpose(0, 4, 1, 2, 3))


def conv3d_backward(g, x, k):
    B, C, T, H, W = x.shape
    O, _, KT, KH, KW = k.shape
    pt, ph, pw = KT // 2, KH // 2, KW // 2
    cols = _conv3d_cols(x, (KT, KH, KW))
    g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(B * T * H * W, O)
    gk = (g2.T @ cols).reshape(k.shape)
    gcols = (g2 @ k.reshape(O, -1)).reshape(B, T, H, W, C, KT, KH, KW)
    gxp = np.zeros((B, C, T + 2 * pt, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    for dt in range(KT):
        for dh in range(KH):
            for dw in range(KW):
                gxp[:, :, dt:dt + T, dh:dh + H, dw:dw + W] += \
                    gcols[:, :, :, :, :, dt, dh, dw].transpose(0, 4, 1, 2, 3)
    gx = gxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W]
    return np.ascontiguousarray(gx), gk


# ---------------------------------------------------------------------------
# GRU over a full sequence, zero initial state.
# x [B,T,D], wx [D,3H], wh [H,3H], bx/bh [3H]; gate layout [reset|update|cand].


def gru_forward(x, wx, wh, bx, bh):
    B, T, D = x.shape
    H = wh.shape[0]
    xg = (x.reshape(B * T, D) @ wx + bx).reshape(B, T, 3 * H)
    hseq = np.zeros((B, T, H), dtype=np.float64)
    r_all = np.empty((B, T, H))
    z_all = np.empty((B, T, H))
    n_all = np.empty((B, T, H))
    hgn_all = np.empty((B, T, H))
    hprev_all = np.empty((B, T, H))
    h = np.zeros((B, H), dtype=np.float64)
    for t in range(T):
        hg = h @ wh + bh
        r = _sigmoid(xg[:, t, :H] + hg[:, :H])
        z = _sigmoid(xg[:, t, H:2 * H] + hg[:, H:2 * H])
        hgn = hg[:, 2 * H:]
        n = np.tanh(xg[:, t, 2 * H:] + r * hgn)
        hprev_all[:, t] = h
        h = (1.0 - z) * n + z * h
        r_all[:, t] = r
        z_all[:, t] = z
        n_all[:, t] = n
        hgn_all[:, t] = hgn
        hseq[:, t] = h
    return hseq, (r_all, z_all, n_all, hgn_all, hprev_all)


def gru_backward(g, x, wx, wh, cache):
    r_all, z_all, n_all, hgn_all, hprev_all = cache
    B, T, D = x.shape
    H = wh.shape[0]
    dxg = np.zeros((B, T, 3 * H), dtype=np.float64)
    gwh = np.zeros_like(wh)
    gbh = np.zeros(3 * H, dtype=np.float64)
    gh = np.zeros((B, H), dtype=np.float64)
    dhg = np.empty((B, 3 * H), dtype=np.float64)
    for t in range(T - 1, -1, -1):
        ght = g[:, t] + gh
        r = r_all[:, t]
        z = z_all[:, t]
        n = n_all[:, t]
        hgn = hgn_all[:, t]
        hp = hprev_all[:, t]
        dz = ght * (hp - n) * z * (1.0 - z)
        dn = ght * (1.0 - z) * (1.0 - n * n)
        dr = dn * hgn * r * (1.0 - r)
        dxg[:, t, :H] = dr
        dxg[:, t, H:2 * H] = dz
        dxg[:, t, 2 * H:] = dn
        dhg[:, :H] = dr
        dhg[:, H:2 * H] = dz
        dhg[:, 2 * H:] = dn * r
        gwh += hp.T @ dhg
        gbh += dhg.sum(axis=0)
        gh = ght * z + dhg @ wh.T
    dxg2 = dxg.reshape(B * T, 3 * H)
    gwx = x.reshape(B * T, D).T @ dxg2
    gbx = dxg2.sum(axis=0)
    gx = (dxg2 @ wx.T).reshape(B, T, D)
    return gx, gwx, gwh, gbx, gbh
