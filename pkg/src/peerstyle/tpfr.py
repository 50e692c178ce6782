"""Two-stage peer-regularized feature recombination over latent codes.

Stage one builds a k-NN graph between the content codes of the input and the
target and recombines the target's style along it. Stage two builds a graph
on the (new) style codes and recombines the target's content.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import tensor as T
from .nn import INIT_STD, LatentCode, Module, Parameter
from .tensor import ShapeError, Tensor


@dataclass
class PeerGraph:
    neighbor_index: np.ndarray  # (B, P, K) flat indices into target pixels
    distances: np.ndarray  # (B, P, K) Euclidean, non-decreasing along K

    @property
    def k(self):
        return self.neighbor_index.shape[2]


def _pixels(x):
    """(B, d, h, w) -> (B, h*w, d) float array; off the tape."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    b, d = data.shape[:2]
    return np.ascontiguousarray(data.reshape(b, d, -1).transpose(0, 2, 1))


def knn_graph(query, target, k):
    """K nearest target pixels (Euclidean over channels) for every query pixel.

    Ties go to the lower flat target index.
    """
    qshape = query.shape
    tshape = target.shape
    if len(qshape) != 4 or len(tshape) != 4:
        raise ShapeError(f"knn_graph expects 4-D maps, got {qshape} and {tshape}")
    if qshape[:2] != tshape[:2]:
        raise ShapeError(f"knn_graph: batch/channel mismatch {qshape[:2]} vs {tshape[:2]}")
    n_target = tshape[2] * tshape[3]
    if not 1 <= k <= n_target:
        raise ValueError(f"K={k} must lie in [1, {n_target}] (target pixel count)")
    qp, tp = _pixels(query), _pixels(target)
    idx = np.empty((qshape[0], qp.shape[1], k), dtype=np.int64)
    dist = np.empty((qshape[0], qp.shape[1], k))
    for b in range(qshape[0]):
        idx[b], d2 = _kernels.knn(qp[b], tp[b], k)
        dist[b] = np.sqrt(d2)
    return PeerGraph(idx, dist)


class AttentionHead(Module):
    """Linear score of a concatenated (query, neighbor) feature pair.

    No bias: scores are only compared across the K neighbors of one query.
    """

    def __init__(self, channels, rng):
        self.channels = channels
        self.weight = Parameter(rng.normal(0.0, INIT_STD, size=2 * channels))

    def forward(self, query, neighbors):
        """query (B, d, P), neighbors (B, d, P, K) -> scores (B, P, K)."""
        d = self.channels
        if query.shape[1] != d or neighbors.shape[1] != d:
            raise ShapeError(f"attention head expects {d} guide channels, got {query.shape[1]}")
        wq = T.reshape(T.slice_axis(self.weight, 0, 0, d), (1, d, 1))
        wn = T.reshape(T.slice_axis(self.weight, 0, d, 2 * d), (1, d, 1, 1))
        sq = T.sum_(query * wq, axis=1)  # (B, P)
        sn = T.sum_(neighbors * wn, axis=1)  # (B, P, K)
        b, p = sq.shape
        return sn + T.reshape(sq, (b, p, 1))


def attention_weights(guide_query, guide_neighbors, head, dropout_rate=0.0, training=False, rng=None):
    """Normalized LReLU(exp(score)) over the K neighbors of each query pixel.

    exp is positive so the leaky ReLU never bends; the result equals a softmax of
    the head scores. A per-pixel max shift keeps exp in range without changing
    the ratio.
    """
    scores = head(guide_query, guide_neighbors)
    shift = Tensor(scores.data.max(axis=-1, keepdims=True))
    e = T.leaky_relu(T.exp(scores - shift), 0.2)
    alpha = e / T.sum_(e, axis=-1, keepdims=True)
    return T.dropout(alpha, dropout_rate, training, rng)


def peer_recombine(guide_query, guide_target, values_target, k, head,
                   dropout_rate=0.0, training=False, rng=None, graph=None):
    """Replace every query pixel by an attention-weighted mix of its K peers' values.

    Returns ``(values, alpha)`` where values has the query's spatial extent and
    alpha is the (B, P, K) weight tensor.
    """
    if guide_target.shape[2:] != values_target.shape[2:] or guide_target.shape[0] != values_target.shape[0]:
        raise ShapeError(
            f"guide target {guide_target.shape} and values {values_target.shape} disagree spatially")
    if graph is None:
        graph = knn_graph(guide_query, guide_target, k)
    b, d, h, w = guide_query.shape
    cv = values_target.shape[1]
    idx = graph.neighbor_index
    q = T.reshape(guide_query, (b, d, h * w))
    gt = T.reshape(guide_target, (b, d, -1))
    neighbors = T.gather_pixels(gt, idx)  # (B, d, P, K)
    alpha = attention_weights(q, neighbors, head, dropout_rate, training, rng)
    vals = T.gather_pixels(T.reshape(values_target, (b, cv, -1)), idx)  # (B, Cv, P, K)
    mixed = T.sum_(vals * T.reshape(alpha, (b, 1, h * w, graph.k)), axis=-1)
    return T.reshape(mixed, (b, cv, h, w)), alpha


def style_guide(style_local, style_global):
    """Per-pixel style feature: local style with the global vector broadcast to every site."""
    b, cg = style_global.shape[:2]
    h, w = style_local.shape[2:]
    return T.concat([style_local, T.broadcast_to(style_global, (b, cg, h, w))], axis=1)


class TPFR(Module):
    def __init__(self, cfg, rng):
        self.k = cfg.k_neighbors
        self.dropout = cfg.attention_dropout
        self.content_channels = cfg.content_channels
        self.style_channels = cfg.style_local_channels + cfg.style_global_channels
        self.head_content = AttentionHead(cfg.content_channels, rng)
        self.head_style = AttentionHead(self.style_channels, rng)

    def _check(self, z):
        if z.content.shape[1] != self.content_channels or (
                z.style_local.shape[1] + z.style_global.shape[1] != self.style_channels):
            raise ShapeError("latent code channel split does not match the TPFR configuration")
        if z.style_global.shape[2:] != (1, 1):
            raise ShapeError(f"global style must be 1x1, got {z.style_global.shape[2:]}")

    def forward(self, z_i, z_t, rng=None, training=False, two_stage=True):
        self._check(z_i)
        self._check(z_t)
        if z_i.content.shape[0] != z_t.content.shape[0]:
            raise ShapeError("input and target latent codes have different batch sizes")
        rate = self.dropout

        # stage one: content-guided style recombination
        local_out, alpha = peer_recombine(
            z_i.content, z_t.content, z_t.style_local, self.k, self.head_content,
            rate, training, rng)
        b = alpha.shape[0]
        mass = T.mean(T.sum_(alpha, axis=2), axis=1)  # (B,)
        global_out = z_t.style_global * T.reshape(mass, (b, 1, 1, 1))
        if not two_stage:
            return LatentCode(z_i.content, local_out, global_out)

        # stage two: style-guided content recombination
        content_out, _ = peer_recombine(
            style_guide(local_out, global_out), style_guide(z_t.style_local, z_t.style_global),
            z_t.content, self.k, self.head_style, rate, training, rng)
        return LatentCode(content_out, local_out, global_out)


def tpfr_forward(z_i, z_t, module, rng=None, training=False, two_stage=True):
    return module(z_i, z_t, rng=rng, training=training, two_stage=two_stage)
