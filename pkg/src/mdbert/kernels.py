"""Hot inner loops, each with a numba and a pure-numpy implementation.

Every reduction here runs in a fixed, documented order (ascending index along
the reduced axis, starting from zero). That is what makes a padded layout and
an unpadded layout of the same data produce bit-identical results: padded
slots contribute exact zeros appended after the real terms. BLAS gives no such
guarantee, so the tensor core never calls ``@`` on pad-sensitive axes.

The public names at the bottom are bound to one backend according to
``MDB_NUMBA``; the ``*_numba`` and ``*_numpy`` variants stay importable so the
two paths can be tested and benchmarked against each other.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

GELU_C = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def matmul3_numpy(a, b):
    """(B, M, K) @ (B, K, N) -> (B, M, N), accumulating over k in order."""
    out = np.zeros((a.shape[0], a.shape[1], b.shape[2]), dtype=a.dtype)
    for k in range(a.shape[2]):
        out += a[:, :, k, None] * b[:, None, k, :]
    return out


def rowsum_numpy(x):
    """Sum of each row of a 2-D array, left to right."""
    out = np.zeros(x.shape[0], dtype=x.dtype)
    for j in range(x.shape[1]):
        out += x[:, j]
    return out


def softmax_rows_numpy(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / rowsum_numpy(e)[:, None]


def softmax_rows_backward_numpy(y, dy):
    return y * (dy - rowsum_numpy(dy * y)[:, None])


def layer_norm_rows_numpy(x, gain, bias, eps):
    n = x.shape[1]
    mu = rowsum_numpy(x) / n
    xc = x - mu[:, None]
    var = rowsum_numpy(xc * xc) / n
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gain + bias, xhat, rstd.astype(x.dtype)


def layer_norm_rows_backward_numpy(dy, xhat, rstd, gain):
    n = xhat.shape[1]
    dbias = np.zeros(xhat.shape[1], dtype=dy.dtype)
    dgain = np.zeros(xhat.shape[1], dtype=dy.dtype)
    for r in range(dy.shape[0]):
        dbias += dy[r]
        dgain += dy[r] * xhat[r]
    dxhat = dy * gain
    s1 = rowsum_numpy(dxhat)
    s2 = rowsum_numpy(dxhat * xhat)
    dx = (dxhat - s1[:, None] / n - xhat * (s2[:, None] / n)) * rstd[:, None]
    return dx, dgain, dbias


def gelu_numpy(x):
    c = x.dtype.type(GELU_C)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def gelu_backward_numpy(x, dy):
    c = x.dtype.type(GELU_C)
    t = np.tanh(c * (x + 0.044715 * x**3))
    dt = (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def masked_mean_numpy(x, mask):
    """Mean of ``x[b, s]`` over the ``s`` positions where ``mask[b, s]`` is set."""
    acc = np.zeros((x.shape[0], x.shape[2]), dtype=x.dtype)
    count = np.zeros(x.shape[0], dtype=x.dtype)
    zero = x.dtype.type(0)
    for s in range(x.shape[1]):
        keep = mask[:, s] != 0
        acc += np.where(keep[:, None], x[:, s, :], zero)
        count += keep
    return acc / count[:, None]


def bm25_scores_numpy(term_ptr, post_ids, post_tf, doc_len, avg_len, query_terms, idf, k, b, n_docs):
    scores = np.zeros(n_docs, dtype=np.float64)
    norm = k * (1.0 - b + b * (doc_len / avg_len))
    for t in query_terms:
        if t < 0:
            continue
        lo, hi = term_ptr[t], term_ptr[t + 1]
        ids = post_ids[lo:hi]
        tf = post_tf[lo:hi]
        scores[ids] += (tf * (1.0 + k)) / (tf + norm[ids]) * idf[t]
    return scores


def midranks_numpy(x):
    """1-based ranks with ties assigned the average of the ranks they span."""
    sorter = np.argsort(x, kind="mergesort")
    inv = np.empty(sorter.size, dtype=np.intp)
    inv[sorter] = np.arange(sorter.size, dtype=np.intp)
    xs = x[sorter]
    obs = np.r_[True, xs[1:] != xs[:-1]]
    dense = obs.cumsum()[inv]
    count = np.r_[np.nonzero(obs)[0], len(obs)]
    return 0.5 * (count[dense] + count[dense - 1] + 1)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit
def matmul3_numba(a, b):
    nb, m, kk = a.shape
    n = b.shape[2]
    out = np.zeros((nb, m, n), dtype=a.dtype)
    for bb in range(nb):
        for i in range(m):
            for k in range(kk):
                aik = a[bb, i, k]
                for j in range(n):
                    out[bb, i, j] += aik * b[bb, k, j]
    return out


@njit
def rowsum_numba(x):
    out = np.zeros(x.shape[0], dtype=x.dtype)
    for r in range(x.shape[0]):
        acc = out[r]
        for j in range(x.shape[1]):
            acc += x[r, j]
        out[r] = acc
    return out


@njit
def softmax_rows_numba(x):
    rows, n = x.shape
    out = np.empty_like(x)
    for r in range(rows):
        m = x[r, 0]
        for j in range(1, n):
            if x[r, j] > m:
                m = x[r, j]
        s = out.dtype.type(0.0)
        for j in range(n):
            e = np.exp(x[r, j] - m)
            out[r, j] = e
            s += e
        for j in range(n):
            out[r, j] = out[r, j] / s
    return out


@njit
def softmax_rows_backward_numba(y, dy):
    rows, n = y.shape
    out = np.empty_like(y)
    for r in range(rows):
        s = y.dtype.type(0.0)
        for j in range(n):
            s += dy[r, j] * y[r, j]
        for j in range(n):
            out[r, j] = y[r, j] * (dy[r, j] - s)
    return out


@njit
def layer_norm_rows_numba(x, gain, bias, eps):
    rows, n = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        s = x.dtype.type(0.0)
        for j in range(n):
            s += x[r, j]
        mu = s / n
        v = x.dtype.type(0.0)
        for j in range(n):
            d = x[r, j] - mu
            v += d * d
        v = v / n
        rs = 1.0 / np.sqrt(v + eps)
        rstd[r] = rs
        for j in range(n):
            h = (x[r, j] - mu) * rs
            xhat[r, j] = h
            y[r, j] = h * gain[j] + bias[j]
    return y, xhat, rstd


@njit
def layer_norm_rows_backward_numba(dy, xhat, rstd, gain):
    rows, n = xhat.shape
    dx = np.empty_like(dy)
    dgain = np.zeros(n, dtype=dy.dtype)
    dbias = np.zeros(n, dtype=dy.dtype)
    for r in range(rows):
        s1 = dy.dtype.type(0.0)
        s2 = dy.dtype.type(0.0)
        for j in range(n):
            g = dy[r, j] * gain[j]
            s1 += g
            s2 += g * xhat[r, j]
            dbias[j] += dy[r, j]
            dgain[j] += dy[r, j] * xhat[r, j]
        for j in range(n):
            g = dy[r, j] * gain[j]
            dx[r, j] = (g - s1 / n - xhat[r, j] * (s2 / n)) * rstd[r]
    return dx, dgain, dbias


@njit
def _gelu_flat_numba(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        out[i] = 0.5 * v * (1.0 + np.tanh(GELU_C * (v + 0.044715 * v * v * v)))
    return out


@njit
def _gelu_backward_flat_numba(x, dy):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        t = np.tanh(GELU_C * (v + 0.044715 * v * v * v))
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        out[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt)
    return out


def gelu_numba(x):
    return _gelu_flat_numba(np.ascontiguousarray(x).reshape(-1)).reshape(x.shape)


def gelu_backward_numba(x, dy):
    flat = _gelu_backward_flat_numba(np.ascontiguousarray(x).reshape(-1), np.ascontiguousarray(dy).reshape(-1))
    return flat.reshape(x.shape)


@njit
def masked_mean_numba(x, mask):
    nb, ns, ne = x.shape
    out = np.zeros((nb, ne), dtype=x.dtype)
    for bb in range(nb):
        count = 0
        for s in range(ns):
            if mask[bb, s] != 0:
                count += 1
                for e in range(ne):
                    out[bb, e] += x[bb, s, e]
        for e in range(ne):
            out[bb, e] = out[bb, e] / count
    return out


@njit
def bm25_scores_numba(term_ptr, post_ids, post_tf, doc_len, avg_len, query_terms, idf, k, b, n_docs):
    scores = np.zeros(n_docs, dtype=np.float64)
    for t in query_terms:
        if t < 0:
            continue
        w = idf[t]
        for p in range(term_ptr[t], term_ptr[t + 1]):
            i = post_ids[p]
            tf = post_tf[p]
            norm = k * (1.0 - b + b * (doc_len[i] / avg_len))
            scores[i] += (tf * (1.0 + k)) / (tf + norm) * w
    return scores


@njit
def midranks_numba(x):
    n = x.size
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = 0.5 * (i + j) + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = r
        i = j + 1
    return ranks


def _contig(*arrays):
    return tuple(np.ascontiguousarray(a) for a in arrays)


def _wrap_numba(fn):
    def call(*arrays):
        return fn(*_contig(*arrays))

    call.__name__ = fn.__name__ if hasattr(fn, "__name__") else "kernel"
    return call


NUMPY = {
    "matmul3": matmul3_numpy,
    "rowsum": rowsum_numpy,
    "softmax_rows": softmax_rows_numpy,
    "softmax_rows_backward": softmax_rows_backward_numpy,
    "layer_norm_rows": layer_norm_rows_numpy,
    "layer_norm_rows_backward": layer_norm_rows_backward_numpy,
    "gelu": gelu_numpy,
    "gelu_backward": gelu_backward_numpy,
    "masked_mean": masked_mean_numpy,
    "bm25_scores": bm25_scores_numpy,
    "midranks": midranks_numpy,
}

NUMBA = {
    "matmul3": _wrap_numba(matmul3_numba),
    "rowsum": _wrap_numba(rowsum_numba),
    "softmax_rows": _wrap_numba(softmax_rows_numba),
    "softmax_rows_backward": _wrap_numba(softmax_rows_backward_numba),
    "gelu": gelu_numba,
    "gelu_backward": gelu_backward_numba,
    "masked_mean": _wrap_numba(masked_mean_numba),
    "midranks": _wrap_numba(midranks_numba),
}


def _layer_norm_numba(x, gain, bias, eps):
    x, gain, bias = _contig(x, gain, bias)
    return layer_norm_rows_numba(x, gain, bias, x.dtype.type(eps))


def _bm25_numba(term_ptr, post_ids, post_tf, doc_len, avg_len, query_terms, idf, k, b, n_docs):
    return bm25_scores_numba(
        term_ptr, post_ids, post_tf, doc_len, float(avg_len), np.asarray(query_terms, dtype=np.int64), idf,
        float(k), float(b), int(n_docs),
    )


NUMBA["layer_norm_rows"] = _layer_norm_numba
NUMBA["layer_norm_rows_backward"] = _wrap_numba(layer_norm_rows_backward_numba)
NUMBA["bm25_scores"] = _bm25_numba

_ACTIVE = NUMBA if USE_NUMBA else NUMPY

matmul3 = _ACTIVE["matmul3"]
rowsum = _ACTIVE["rowsum"]
softmax_rows = _ACTIVE["softmax_rows"]
softmax_rows_backward = _ACTIVE["softmax_rows_backward"]
layer_norm_rows = _ACTIVE["layer_norm_rows"]
layer_norm_rows_backward = _ACTIVE["layer_norm_rows_backward"]
gelu = _ACTIVE["gelu"]
gelu_backward = _ACTIVE["gelu_backward"]
masked_mean = _ACTIVE["masked_mean"]
bm25_scores = _ACTIVE["bm25_scores"]
midranks = _ACTIVE["midranks"]
