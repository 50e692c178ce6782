"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and ``PEERSTYLE_NUMBA`` is
not set to ``0``/``false``/``off``. Both paths are deterministic; they agree to
rounding (col2im and the scatter kernels sum in a different order).
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _numba_requested():
    flag = os.environ.get("PEERSTYLE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


USE_NUMBA = numba is not None and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def im2col_numpy(xp, kh, kw, stride, ho, wo):
    """(B, C, Hp, Wp) padded input -> (B, C*kh*kw, ho*wo) patch matrix."""
    b, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (B, C, ho, wo, kh, kw) -> (B, C, kh, kw, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, ho * wo)


def col2im_numpy(cols, c, hp, wp, kh, kw, stride, ho, wo):
    """Adjoint of :func:`im2col_numpy`: scatter-add patches back to (B, C, hp, wp)."""
    b = cols.shape[0]
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros((b, c, hp, wp))
    for i in range(kh):
        hi = i + stride * (ho - 1) + 1
        for j in range(kw):
            wj = j + stride * (wo - 1) + 1
            out[:, :, i:hi:stride, j:wj:stride] += cols[:, :, i, j]
    return out


def knn_numpy(query, target, k, block=256):
    """Brute-force k-NN on squared Euclidean distance.

    query (P, d), target (Q, d) -> (indices (P, k) int64, squared distances (P, k)).
    Ties resolve to the lower target index.
    """
    p = query.shape[0]
    idx = np.empty((p, k), dtype=np.int64)
    dist = np.empty((p, k))
    for start in range(0, p, block):
        stop = min(start + block, p)
        diff = query[start:stop, None, :] - target[None, :, :]
        d2 = np.einsum("pqd,pqd->pq", diff, diff)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.take_along_axis(d2, order, axis=1)
    return idx, dist


def gather_numpy(values, idx):
    """values (B, C, Q), idx (B, P, K) -> (B, C, P, K)."""
    b = values.shape[0]
    return np.stack([values[n][:, idx[n]] for n in range(b)])


def scatter_numpy(grad, idx, q):
    """Adjoint of :func:`gather_numpy`: (B, C, P, K) -> (B, C, Q)."""
    b, c = grad.shape[:2]
    out = np.zeros((b, c, q))
    for n in range(b):
        flat = idx[n].ravel()
        g = grad[n].reshape(c, -1)
        for ch in range(c):
            out[n, ch] = np.bincount(flat, weights=g[ch], minlength=q)
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if numba is not None:
    _njit = numba.njit(cache=True, nogil=True)

    @_njit
    def im2col_numba(xp, kh, kw, stride, ho, wo):
        b, c = xp.shape[0], xp.shape[1]
        out = np.empty((b, c * kh * kw, ho * wo))
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            yy = y * stride + i
                            for x in range(wo):
                                out[n, row, y * wo + x] = xp[n, ch, yy, x * stride + j]
        return out

    @_njit
    def col2im_numba(cols, c, hp, wp, kh, kw, stride, ho, wo):
        b = cols.shape[0]
        out = np.zeros((b, c, hp, wp))
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            yy = y * stride + i
                            for x in range(wo):
                                out[n, ch, yy, x * stride + j] += cols[n, row, y * wo + x]
        return out

    @_njit
    def knn_numba(query, target, k):
        p, d = query.shape
        q = target.shape[0]
        idx = np.empty((p, k), dtype=np.int64)
        dist = np.empty((p, k))
        for a in range(p):
            filled = 0
            for t in range(q):
                s = 0.0
                for ch in range(d):
                    diff = query[a, ch] - target[t, ch]
                    s += diff * diff
                # strict comparison keeps the earlier (lower) index on ties
                if filled == k and s >= dist[a, k - 1]:
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and dist[a, pos - 1] > s:
                    if pos < k:
                        dist[a, pos] = dist[a, pos - 1]
                        idx[a, pos] = idx[a, pos - 1]
                    pos -= 1
                dist[a, pos] = s
                idx[a, pos] = t
                if filled < k:
                    filled += 1
        return idx, dist

    @_njit
    def gather_numba(values, idx):
        b, c = values.shape[0], values.shape[1]
        p, k = idx.shape[1], idx.shape[2]
        out = np.empty((b, c, p, k))
        for n in range(b):
            for ch in range(c):
                for a in range(p):
                    for j in range(k):
                        out[n, ch, a, j] = values[n, ch, idx[n, a, j]]
        return out

    @_njit
    def scatter_numba(grad, idx, q):
        b, c, p, k = grad.shape
        out = np.zeros((b, c, q))
        for n in range(b):
            for ch in range(c):
                for a in range(p):
                    for j in range(k):
                        out[n, ch, idx[n, a, j]] += grad[n, ch, a, j]
        return out


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(xp, kh, kw, stride, ho, wo):
    if USE_NUMBA:
        return im2col_numba(_f64(xp), kh, kw, stride, ho, wo)
    return im2col_numpy(xp, kh, kw, stride, ho, wo)


def col2im(cols, c, hp, wp, kh, kw, stride, ho, wo):
    if USE_NUMBA:
        return col2im_numba(_f64(cols), c, hp, wp, kh, kw, stride, ho, wo)
    return col2im_numpy(cols, c, hp, wp, kh, kw, stride, ho, wo)


def knn(query, target, k):
    if USE_NUMBA:
        return knn_numba(_f64(query), _f64(target), k)
    return knn_numpy(query, target, k)


def gather(values, idx):
    if USE_NUMBA:
        return gather_numba(_f64(values), np.ascontiguousarray(idx, dtype=np.int64))
    return gather_numpy(values, idx)


def scatter(grad, idx, q):
    if USE_NUMBA:
        return scatter_numba(_f64(grad), np.ascontiguousarray(idx, dtype=np.int64), q)
    return scatter_numpy(grad, idx, q)
