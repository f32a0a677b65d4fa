"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``DSMT_DISABLE_NUMBA`` is unset
(or ``0``). Both paths expose the same functions and are interchangeable;
``tests/test_kernels.py`` checks them against each other and
``benchmarks/bench_kernels.py`` times them.

The numba circular correlation is the direct O(d^2) sum; the numpy path uses
the FFT identity and agrees with it to ~1e-13.
"""

import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------


def _np_corr_forward(a, b):
    d = a.shape[-1]
    return np.fft.irfft(np.conj(np.fft.rfft(a, axis=-1)) * np.fft.rfft(b, axis=-1), n=d, axis=-1)


def _np_corr_backward(g, a, b):
    d = a.shape[-1]
    fg = np.fft.rfft(g, axis=-1)
    ga = np.fft.irfft(np.conj(fg) * np.fft.rfft(b, axis=-1), n=d, axis=-1)
    gb = np.fft.irfft(np.fft.rfft(a, axis=-1) * fg, n=d, axis=-1)
    return ga, gb


def _windows(x, kh, kw):
    # (N, C, Ho, Wo, kh, kw) view
    return np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))


def _np_conv2d_forward(x, w, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(x, w.shape[2], w.shape[3])
    return np.einsum("nchwij,fcij->nfhw", win, w, optimize=True)


def _np_conv2d_backward(g, x, w, pad):
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gw = np.einsum("nchwij,nfhw->fcij", _windows(xp, kh, kw), g, optimize=True)
    gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wf = w[:, :, ::-1, ::-1]
    gxp = np.einsum("nfhwij,fcij->nchw", _windows(gp, kh, kw), wf, optimize=True)
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp), gw


def _np_segment_sum(x, index, n):
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, index, x)
    return out


def _np_rank_counts(scores, targets, indptr, indices):
    q, n = scores.shape
    greater = np.empty(q, dtype=np.int64)
    ties = np.empty(q, dtype=np.int64)
    keep = np.ones(n, dtype=bool)
    for i in range(q):
        filt = indices[indptr[i]:indptr[i + 1]]
        keep[filt] = False
        keep[targets[i]] = False
        row = scores[i]
        s = row[targets[i]]
        greater[i] = np.count_nonzero(keep & (row > s))
        ties[i] = np.count_nonzero(keep & (row == s))
        keep[filt] = True
        keep[targets[i]] = True
    return greater, ties


NUMPY = SimpleNamespace(
    name="numpy",
    corr_forward=_np_corr_forward,
    corr_backward=_np_corr_backward,
    conv2d_forward=_np_conv2d_forward,
    conv2d_backward=_np_conv2d_backward,
    segment_sum=_np_segment_sum,
    rank_counts=_np_rank_counts,
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_corr_forward(a, b):
        n, d = a.shape
        out = np.zeros((n, d))
        for r in range(n):
            for k in range(d):
                acc = 0.0
                for i in range(d):
                    j = i + k
                    if j >= d:
                        j -= d
                    acc += a[r, i] * b[r, j]
                out[r, k] = acc
        return out

    @njit(cache=True)
    def _nb_corr_backward(g, a, b):
        n, d = a.shape
        ga = np.zeros((n, d))
        gb = np.zeros((n, d))
        for r in range(n):
            for k in range(d):
                gk = g[r, k]
                if gk == 0.0:
                    continue
                for i in range(d):
                    j = i + k
                    if j >= d:
                        j -= d
                    ga[r, i] += gk * b[r, j]
                    gb[r, j] += gk * a[r, i]
        return ga, gb

    @njit(cache=True)
    def _nb_conv2d_forward_padded(x, w):
        n, c, h, wd = x.shape
        f, _, kh, kw = w.shape
        ho = h - kh + 1
        wo = wd - kw + 1
        out = np.zeros((n, f, ho, wo))
        for s in range(n):
            for o in range(f):
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[o, ch, i, j]
                            for y in range(ho):
                                for xx in range(wo):
                                    out[s, o, y, xx] += wv * x[s, ch, y + i, xx + j]
        return out

    @njit(cache=True)
    def _nb_conv2d_backward_padded(g, x, w):
        n, c, h, wd = x.shape
        f, _, kh, kw = w.shape
        ho = h - kh + 1
        wo = wd - kw + 1
        gx = np.zeros((n, c, h, wd))
        gw = np.zeros((f, c, kh, kw))
        for s in range(n):
            for o in range(f):
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[o, ch, i, j]
                            acc = 0.0
                            for y in range(ho):
                                for xx in range(wo):
                                    gv = g[s, o, y, xx]
                                    acc += gv * x[s, ch, y + i, xx + j]
                                    gx[s, ch, y + i, xx + j] += gv * wv
                            gw[o, ch, i, j] += acc
        return gx, gw

    def _nb_conv2d_forward(x, w, pad):
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        return _nb_conv2d_forward_padded(np.ascontiguousarray(x), np.ascontiguousarray(w))

    def _nb_conv2d_backward(g, x, w, pad):
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        gx, gw = _nb_conv2d_backward_padded(
            np.ascontiguousarray(g), np.ascontiguousarray(x), np.ascontiguousarray(w)
        )
        if pad:
            gx = np.ascontiguousarray(gx[:, :, pad:-pad, pad:-pad])
        return gx, gw

    @njit(cache=True)
    def _nb_segment_sum_2d(x, index, n):
        out = np.zeros((n, x.shape[1]))
        for r in range(x.shape[0]):
            t = index[r]
            for k in range(x.shape[1]):
                out[t, k] += x[r, k]
        return out

    def _nb_segment_sum(x, index, n):
        if x.ndim != 2:
            return _np_segment_sum(x, index, n)
        return _nb_segment_sum_2d(
            np.ascontiguousarray(x, dtype=np.float64), np.asarray(index, dtype=np.int64), n
        )

    @njit(cache=True)
    def _nb_rank_counts_impl(scores, targets, indptr, indices):
        q, n = scores.shape
        greater = np.zeros(q, dtype=np.int64)
        ties = np.zeros(q, dtype=np.int64)
        keep = np.ones(n, dtype=np.bool_)
        for i in range(q):
            t = targets[i]
            for p in range(indptr[i], indptr[i + 1]):
                keep[indices[p]] = False
            keep[t] = False
            s = scores[i, t]
            gcount = 0
            tcount = 0
            for e in range(n):
                if keep[e]:
                    v = scores[i, e]
                    if v > s:
                        gcount += 1
                    elif v == s:
                        tcount += 1
            greater[i] = gcount
            ties[i] = tcount
            for p in range(indptr[i], indptr[i + 1]):
                keep[indices[p]] = True
            keep[t] = True
        return greater, ties

    def _nb_rank_counts(scores, targets, indptr, indices):
        return _nb_rank_counts_impl(
            np.ascontiguousarray(scores, dtype=np.float64),
            np.asarray(targets, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
            np.asarray(indices, dtype=np.int64),
        )

    def _nb_corr_fwd(a, b):
        return _nb_corr_forward(np.ascontiguousarray(a), np.ascontiguousarray(b))

    def _nb_corr_bwd(g, a, b):
        return _nb_corr_backward(
            np.ascontiguousarray(g), np.ascontiguousarray(a), np.ascontiguousarray(b)
        )

    NUMBA = SimpleNamespace(
        name="numba",
        corr_forward=_nb_corr_fwd,
        corr_backward=_nb_corr_bwd,
        conv2d_forward=_nb_conv2d_forward,
        conv2d_backward=_nb_conv2d_backward,
        segment_sum=_nb_segment_sum,
        rank_counts=_nb_rank_counts,
    )
else:  # pragma: no cover
    NUMBA = None


def _env_disabled():
    return os.environ.get("DSMT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


backend = NUMBA if (HAS_NUMBA and not _env_disabled()) else NUMPY


def use_backend(name):
    """Switch the active kernel set to ``"numba"`` or ``"numpy"``; returns the previous name."""
    global backend
    prev = backend.name
    if name == "numba":
        if NUMBA is None:
            raise RuntimeError("numba is not installed")
        backend = NUMBA
    elif name == "numpy":
        backend = NUMPY
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def get_backend():
    return backend
