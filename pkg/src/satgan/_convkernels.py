"""JIT-compiled direct convolution kernels.

im2col patch matrices would be k^2 times the input, and this code often
runs on machines where memory bandwidth, not FLOPs, is the ceiling, so
convolutions are computed directly against a zero-padded copy of the
input (which stays cache-resident at the model sizes used here).

Vectorization notes, learned the hard way on this code:
  - inner loops must be full-width (no data-dependent bounds), hence the
    padded input planes;
  - output arrays are allocated inside the kernel, which lets LLVM prove
    the accumulation target does not alias the inputs; accumulating
    through argument views keeps loops scalar;
  - stride-2 access defeats the vectorizer, so stride-2 kernels work on
    column-parity-split planes where every inner loop is unit-stride;
  - the weight-grad reduction needs reassociation to vectorize, so those
    kernels enable fastmath; the emitted reduction order is still fixed,
    so results remain bitwise reproducible run to run.

Parallel loops partition disjoint output slabs (one writer per element),
so the thread count never changes results. Strides other than 1 and 2
take a slow generic path; the models here never use them.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True, parallel=True, fastmath=False)
def pad_nchw(x, p):  # pragma: no cover - exercised via the conv ops
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), x.dtype)
    for ni in nb.prange(n):
        for ci in range(c):
            for i in range(h):
                row = out[ni, ci, i + p]
                src = x[ni, ci, i]
                for j in range(w):
                    row[j + p] = src[j]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def pad_split_parity(x, p):  # pragma: no cover
    """Zero-pad and split columns by parity: even plane, odd plane."""
    n, c, h, w = x.shape
    hp = h + 2 * p
    wp = w + 2 * p
    we = (wp + 1) // 2
    wo = wp // 2
    even = np.zeros((n, c, hp, we), x.dtype)
    odd = np.zeros((n, c, hp, wo), x.dtype)
    for ni in nb.prange(n):
        for ci in range(c):
            for i in range(h):
                src = x[ni, ci, i]
                erow = even[ni, ci, i + p]
                orow = odd[ni, ci, i + p]
                for j in range(w):
                    jp = j + p
                    if jp % 2 == 0:
                        erow[jp // 2] = src[j]
                    else:
                        orow[jp // 2] = src[j]
    return even, odd


@nb.njit(cache=True, parallel=True, fastmath=False)
def fwd_s1(xp, w, ho, wo):  # pragma: no cover
    n, cin, hp, wp = xp.shape
    cout, _, k, _ = w.shape
    out = np.zeros((n, cout, ho, wo), xp.dtype)
    for t in nb.prange(n * cout):
        ni = t // cout
        co = t % cout
        for ci in range(cin):
            for i in range(k):
                for oh in range(ho):
                    xr = xp[ni, ci, oh + i]
                    orow = out[ni, co, oh]
                    for j in range(k):
                        wv = w[co, ci, i, j]
                        for ow in range(wo):
                            orow[ow] += wv * xr[ow + j]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def fwd_s2(xpe, xpo, w, ho, wo):  # pragma: no cover
    n, cin, hp, _ = xpe.shape
    cout, _, k, _ = w.shape
    out = np.zeros((n, cout, ho, wo), xpe.dtype)
    for t in nb.prange(n * cout):
        ni = t // cout
        co = t % cout
        for ci in range(cin):
            for i in range(k):
                for oh in range(ho):
                    xre = xpe[ni, ci, oh * 2 + i]
                    xro = xpo[ni, ci, oh * 2 + i]
                    orow = out[ni, co, oh]
                    for j in range(k):
                        wv = w[co, ci, i, j]
                        half = j // 2
                        if j % 2 == 0:
                            for ow in range(wo):
                                orow[ow] += wv * xre[ow + half]
                        else:
                            for ow in range(wo):
                                orow[ow] += wv * xro[ow + half]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def fwd_generic(xp, w, s, ho, wo):  # pragma: no cover
    n, cin, hp, wp = xp.shape
    cout, _, k, _ = w.shape
    out = np.zeros((n, cout, ho, wo), xp.dtype)
    for t in nb.prange(n * cout):
        ni = t // cout
        co = t % cout
        for ci in range(cin):
            for i in range(k):
                for oh in range(ho):
                    xr = xp[ni, ci, oh * s + i]
                    orow = out[ni, co, oh]
                    for j in range(k):
                        wv = w[co, ci, i, j]
                        for ow in range(wo):
                            orow[ow] += wv * xr[ow * s + j]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def dgrad_s1(gy, w, p, h, wdt):  # pragma: no cover
    n, cout, ho, wo = gy.shape
    _, cin, k, _ = w.shape
    hp = h + 2 * p
    wp = wdt + 2 * p
    gxp = np.zeros((n, cin, hp, wp), gy.dtype)
    for t in nb.prange(n * cin):
        ni = t // cin
        ci = t % cin
        for co in range(cout):
            for i in range(k):
                for oh in range(ho):
                    grow = gy[ni, co, oh]
                    xrow = gxp[ni, ci, oh + i]
                    for j in range(k):
                        wv = w[co, ci, i, j]
                        for ow in range(wo):
                            xrow[ow + j] += wv * grow[ow]
    out = np.empty((n, cin, h, wdt), gy.dtype)
    for t in nb.prange(n * cin):
        ni = t // cin
        ci = t % cin
        for i in range(h):
            dst = out[ni, ci, i]
            src = gxp[ni, ci, i + p]
            for j in range(wdt):
                dst[j] = src[j + p]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def dgrad_s2(gy, w, p, h, wdt):  # pragma: no cover
    n, cout, ho, wo = gy.shape
    _, cin, k, _ = w.shape
    hp = h + 2 * p
    wp = wdt + 2 * p
    we = (wp + 1) // 2
    wodd = wp // 2
    gxe = np.zeros((n, cin, hp, we), gy.dtype)
    gxo = np.zeros((n, cin, hp, wodd), gy.dtype)
    for t in nb.prange(n * cin):
        ni = t // cin
        ci = t % cin
        for co in range(cout):
            for i in range(k):
                for oh in range(ho):
                    grow = gy[ni, co, oh]
                    erow = gxe[ni, ci, oh * 2 + i]
                    orow = gxo[ni, ci, oh * 2 + i]
                    for j in range(k):
                        wv = w[co, ci, i, j]
                        half = j // 2
                        if j % 2 == 0:
                            for ow in range(wo):
                                erow[ow + half] += wv * grow[ow]
                        else:
                            for ow in range(wo):
                                orow[ow + half] += wv * grow[ow]
    out = np.empty((n, cin, h, wdt), gy.dtype)
    for t in nb.prange(n * cin):
        ni = t // cin
        ci = t % cin
        for i in range(h):
            dst = out[ni, ci, i]
            erow = gxe[ni, ci, i + p]
            orow = gxo[ni, ci, i + p]
            for j in range(wdt):
                jp = j + p
                if jp % 2 == 0:
                    dst[j] = erow[jp // 2]
                else:
                    dst[j] = orow[jp // 2]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def dgrad_generic(gy, w, s, p, h, wdt):  # pragma: no cover
    n, cout, ho, wo = gy.shape
    _, cin, k, _ = w.shape
    hp = h + 2 * p
    wp = wdt + 2 * p
    gxp = np.zeros((n, cin, hp, wp), gy.dtype)
    for t in nb.prange(n * cin):
        ni = t // cin
        ci = t % cin
        for co in range(cout):
            for i in range(k):
                for oh in range(ho):
                    grow = gy[ni, co, oh]
                    xrow = gxp[ni, ci, oh * s + i]
                    for j in range(k):
                        wv = w[co, ci, i, j]
                        for ow in range(wo):
                            xrow[ow * s + j] += wv * grow[ow]
    out = np.empty((n, cin, h, wdt), gy.dtype)
    for t in nb.prange(n * cin):
        ni = t // cin
        ci = t % cin
        for i in range(h):
            dst = out[ni, ci, i]
            src = gxp[ni, ci, i + p]
            for j in range(wdt):
                dst[j] = src[j + p]
    return out


@nb.njit(cache=True, parallel=True, fastmath=True)
def wgrad_s1(xp, gy, k):  # pragma: no cover
    n, cin, hp, wp = xp.shape
    _, cout, ho, wo = gy.shape
    gw = np.empty((cout, cin, k, k), xp.dtype)
    for co in nb.prange(cout):
        acc = np.zeros((cin, k, k), np.float64)
        for ni in range(n):
            for ci in range(cin):
                for i in range(k):
                    for oh in range(ho):
                        grow = gy[ni, co, oh]
                        xr = xp[ni, ci, oh + i]
                        for j in range(k):
                            a = 0.0
                            for ow in range(wo):
                                a += grow[ow] * xr[ow + j]
                            acc[ci, i, j] += a
        for ci in range(cin):
            for i in range(k):
                for j in range(k):
                    gw[co, ci, i, j] = acc[ci, i, j]
    return gw


@nb.njit(cache=True, parallel=True, fastmath=True)
def wgrad_s2(xpe, xpo, gy, k):  # pragma: no cover
    n, cin, hp, _ = xpe.shape
    _, cout, ho, wo = gy.shape
    gw = np.empty((cout, cin, k, k), xpe.dtype)
    for co in nb.prange(cout):
        acc = np.zeros((cin, k, k), np.float64)
        for ni in range(n):
            for ci in range(cin):
                for i in range(k):
                    for oh in range(ho):
                        grow = gy[ni, co, oh]
                        xre = xpe[ni, ci, oh * 2 + i]
                        xro = xpo[ni, ci, oh * 2 + i]
                        for j in range(k):
                            half = j // 2
                            a = 0.0
                            if j % 2 == 0:
                                for ow in range(wo):
                                    a += grow[ow] * xre[ow + half]
                            else:
                                for ow in range(wo):
                                    a += grow[ow] * xro[ow + half]
                            acc[ci, i, j] += a
        for ci in range(cin):
            for i in range(k):
                for j in range(k):
                    gw[co, ci, i, j] = acc[ci, i, j]
    return gw


@nb.njit(cache=True, parallel=True, fastmath=True)
def wgrad_generic(xp, gy, s, k):  # pragma: no cover
    n, cin, hp, wp = xp.shape
    _, cout, ho, wo = gy.shape
    gw = np.empty((cout, cin, k, k), xp.dtype)
    for co in nb.prange(cout):
        acc = np.zeros((cin, k, k), np.float64)
        for ni in range(n):
            for ci in range(cin):
                for i in range(k):
                    for oh in range(ho):
                        grow = gy[ni, co, oh]
                        xr = xp[ni, ci, oh * s + i]
                        for j in range(k):
                            a = 0.0
                            for ow in range(wo):
                                a += grow[ow] * xr[ow * s + j]
                            acc[ci, i, j] += a
        for ci in range(cin):
            for i in range(k):
                for j in range(k):
                    gw[co, ci, i, j] = acc[ci, i, j]
    return gw
