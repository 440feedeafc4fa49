"""Hot inner loops of the tensor engine.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with identical results. The numba path is used when numba imports
and ``TARGETTRAIN_DISABLE_NUMBA`` is unset (or ``0``); set the variable to
``1`` to force the numpy path. Matrix products are left to BLAS in both
paths.

Layouts are channels-last: images are ``(n, h, w, c)``, im2col columns are
``(n, ho, wo, kh * kw * c)`` ordered ``(kh, kw, c)`` so they line up with a
kernel of shape ``(kh, kw, cin, cout)`` reshaped to ``(kh * kw * cin, cout)``.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = "TARGETTRAIN_DISABLE_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not _numba_disabled()


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------


def im2col_numpy(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    # win: (n, ho, wo, c, kh, kw) -> (n, ho, wo, kh, kw, c)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n, ho, wo, kh * kw * c)


def col2im_numpy(cols: np.ndarray, h: int, w: int, kh: int, kw: int) -> np.ndarray:
    n, ho, wo, kkc = cols.shape
    c = kkc // (kh * kw)
    cols6 = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + ho, j : j + wo, :] += cols6[:, :, :, i, j, :]
    return out


def maxpool2_forward_numpy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    win = win.reshape(n, h // 2, w // 2, 4, c)
    # argmax returns the first maximum, i.e. first in row-major window scan.
    idx = win.argmax(axis=3)
    out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def maxpool2_backward_numpy(g: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, h2, w2, c = g.shape
    g4 = np.zeros((n, h2, w2, 4, c), dtype=g.dtype)
    np.put_along_axis(g4, idx.astype(np.intp)[:, :, :, None, :], g[:, :, :, None, :], axis=3)
    g4 = g4.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(g4.reshape(n, h2 * 2, w2 * 2, c))


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def im2col_numba(x, kh, kw):
        n, h, w, c = x.shape
        ho = h - kh + 1
        wo = w - kw + 1
        cols = np.empty((n, ho, wo, kh * kw * c), dtype=x.dtype)
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    p = 0
                    for di in range(kh):
                        for dj in range(kw):
                            for ch in range(c):
                                cols[b, i, j, p] = x[b, i + di, j + dj, ch]
                                p += 1
        return cols

    @njit(cache=True)
    def col2im_numba(cols, h, w, kh, kw):
        n, ho, wo, kkc = cols.shape
        c = kkc // (kh * kw)
        out = np.zeros((n, h, w, c), dtype=cols.dtype)
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    p = 0
                    for di in range(kh):
                        for dj in range(kw):
                            for ch in range(c):
                                out[b, i + di, j + dj, ch] += cols[b, i, j, p]
                                p += 1
        return out

    @njit(cache=True)
    def maxpool2_forward_numba(x):
        n, h, w, c = x.shape
        h2 = h // 2
        w2 = w // 2
        out = np.empty((n, h2, w2, c), dtype=x.dtype)
        idx = np.empty((n, h2, w2, c), dtype=np.int8)
        for b in range(n):
            for i in range(h2):
                for j in range(w2):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        arg = 0
                        for q in range(1, 4):
                            v = x[b, 2 * i + q // 2, 2 * j + q % 2, ch]
                            if v > best:
                                best = v
                                arg = q
                        out[b, i, j, ch] = best
                        idx[b, i, j, ch] = arg
        return out, idx

    @njit(cache=True)
    def maxpool2_backward_numba(g, idx):
        n, h2, w2, c = g.shape
        out = np.zeros((n, 2 * h2, 2 * w2, c), dtype=g.dtype)
        for b in range(n):
            for i in range(h2):
                for j in range(w2):
                    for ch in range(c):
                        q = idx[b, i, j, ch]
                        out[b, 2 * i + q // 2, 2 * j + q % 2, ch] = g[b, i, j, ch]
        return out

else:  # pragma: no cover
    im2col_numba = im2col_numpy
    col2im_numba = col2im_numpy
    maxpool2_forward_numba = maxpool2_forward_numpy
    maxpool2_backward_numba = maxpool2_backward_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # A pure strided copy: numpy's sliding-window copy already runs at memory
    # bandwidth and beats the loop kernel ~2x (benchmarks/bench_kernels.py),
    # so both backends use it. im2col_numba stays for parity tests.
    return im2col_numpy(x, kh, kw)


def col2im(cols: np.ndarray, h: int, w: int, kh: int, kw: int) -> np.ndarray:
    if USE_NUMBA:
        return col2im_numba(np.ascontiguousarray(cols), h, w, kh, kw)
    return col2im_numpy(cols, h, w, kh, kw)


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if USE_NUMBA:
        return maxpool2_forward_numba(np.ascontiguousarray(x))
    return maxpool2_forward_numpy(x)


def maxpool2_backward(g: np.ndarray, idx: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        return maxpool2_backward_numba(np.ascontiguousarray(g), idx)
    return maxpool2_backward_numpy(g, idx)
