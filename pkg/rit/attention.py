"""Vector attention across time (temporal encoder) and within a scan (transformer block)."""

from __future__ import annotations

import logging

import numpy as np

from .errors import DimensionError
from .numerics import (
    MLP,
    LinearLayer,
    MLPLayer,
    Module,
    NormLayer,
    Tensor,
    as_tensor,
    concat,
    gelu,
    linear_forward,
    mlp_forward,
    norm_forward,
    reshape,
    softmax_axis,
    tsum,
    zeros,
)
from .pointcloud import SequenceWindow, feature_matrix
from .sampling import NeighborIndex, group_points, knn, sample_and_group

logger = logging.getLogger(__name__)


class VectorAttentionLayer(Module):
    """Subtraction-relation attention with per-channel softmax over k neighbours.

    ``pos_mlp`` is 3→3→D_out, ``weight_mlp`` D_out→D_out→D_out; both use
    batch normalisation over the flattened (N·k) axis. With
    ``weight_mlp=False`` the post-softmax weights are used as they are.
    """

    def __init__(self, d_in: int, d_out: int, k: int, rng: np.random.Generator, weight_mlp: bool = True) -> None:
        self.d_in = d_in
        self.d_out = d_out
        self.k = k
        self.wq = LinearLayer(d_in, d_out, rng)
        self.wk = LinearLayer(d_in, d_out, rng)
        self.wv = LinearLayer(d_in, d_out, rng)
        self.pos_mlp = MLP.build([3, 3, d_out], rng, norm="batch")
        self.weight_mlp = MLP.build([d_out, d_out, d_out], rng, norm="batch") if weight_mlp else MLP([])


def relative_positions(query_pts, source_pts, neighbors: NeighborIndex) -> Tensor:
    """out[i, j] = p_i - p_{neighbors[i, j]}."""
    query_pts = np.asarray(query_pts, dtype=np.float64)
    if len(query_pts) != len(neighbors):
        raise DimensionError(f"{len(query_pts)} query points but {len(neighbors)} neighbour rows")
    return Tensor(query_pts[:, None, :] - group_points(source_pts, neighbors))


def attention_weights(
    layer: VectorAttentionLayer,
    query_feats,
    source_feats,
    query_pts,
    source_pts,
    neighbors: NeighborIndex,
    training: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """(softmax weights before the weight MLP, grouped values, positional encoding)."""
    query_feats, source_feats = as_tensor(query_feats), as_tensor(source_feats)
    if query_feats.shape[-1] != layer.d_in or source_feats.shape[-1] != layer.d_in:
        raise DimensionError(
            f"attention expects width {layer.d_in}, got {query_feats.shape} and {source_feats.shape}"
        )
    n, d = query_feats.shape[0], layer.d_out
    q = linear_forward(query_feats, layer.wq)
    k = sample_and_group(linear_forward(source_feats, layer.wk), neighbors)
    v = sample_and_group(linear_forward(source_feats, layer.wv), neighbors)
    r = mlp_forward(relative_positions(query_pts, source_pts, neighbors), layer.pos_mlp.layers, training)
    logits = reshape(q, (n, 1, d)) - k + r
    return softmax_axis(logits, axis=1), v, r


def vector_attention(
    layer: VectorAttentionLayer,
    query_feats,
    source_feats,
    query_pts,
    source_pts,
    neighbors: NeighborIndex,
    training: bool = False,
) -> Tensor:
    """out_i = Σ_j weight_mlp(softmax_j(q_i - k_j + r_ij)) ⊙ (v_j + r_ij)."""
    a, v, r = attention_weights(layer, query_feats, source_feats, query_pts, source_pts, neighbors, training)
    a = mlp_forward(a, layer.weight_mlp.layers, training)
    return tsum(a * (v + r), axis=1)


# ---------------------------------------------------------------------------
# Transformer block
# ---------------------------------------------------------------------------
class TransformerBlock(Module):
    def __init__(self, dim: int, k: int, rng: np.random.Generator, ffn_ratio: int = 1, weight_mlp: bool = True) -> None:
        self.dim = dim
        self.ln1 = NormLayer(dim, "layer")
        self.attn = VectorAttentionLayer(dim, dim, k, rng, weight_mlp)
        self.ln2 = NormLayer(dim, "layer")
        self.fc1 = LinearLayer(dim, dim * ffn_ratio, rng)
        self.fc2 = LinearLayer(dim * ffn_ratio, dim, rng)


def block_forward(block: TransformerBlock, feats, pts, neighbors: NeighborIndex, training: bool = False) -> Tensor:
    """x + FC(GELU(FC(LN(Attn(LN(x))))))."""
    x = as_tensor(feats)
    if x.shape[-1] != block.dim:
        raise DimensionError(f"block expects width {block.dim}, got {x.shape}")
    h = norm_forward(x, block.ln1, training)
    h = vector_attention(block.attn, h, h, pts, pts, neighbors, training)
    h = norm_forward(h, block.ln2, training)
    h = linear_forward(gelu(linear_forward(h, block.fc1)), block.fc2)
    return x + h


# ---------------------------------------------------------------------------
# Temporal encoder
# ---------------------------------------------------------------------------
def point_lift(d_in: int, d_out: int, rng: np.random.Generator) -> MLP:
    """Shared per-point Linear + BN + ReLU embedding."""
    return MLP([MLPLayer(LinearLayer(d_in, d_out, rng), NormLayer(d_out, "batch"), "relu")])


class SafeModule(VectorAttentionLayer):
    """Lifts current and previous points to D1, then attends from current into previous.

    The attention weights sit directly on the module (``safe.wq.weight``).
    """

    def __init__(self, d1: int, d2: int, k: int, T: int, rng: np.random.Generator, weight_mlp: bool = True) -> None:
        self.d1 = d1
        self.d2 = d2
        self.T = T
        self.kp_current = point_lift(5, d1, rng)
        self.kp_previous = point_lift(5, d1, rng)
        super().__init__(d1, d2, k, rng, weight_mlp)

    @property
    def width(self) -> int:
        return self.d1 + self.d2


def safe_forward(module: SafeModule, window: SequenceWindow, training: bool = False) -> Tensor:
    """Temporal features concatenated with lifted current features, N×(D1+D2).

    Point coordinates are left unchanged. Without previous scans (T = 0) the
    temporal half is zero.
    """
    current = window.current
    x_cur = mlp_forward(feature_matrix(current), module.kp_current.layers, training)
    if module.T == 0 or not window.previous:
        x_temp = zeros((current.n, module.d2))
    else:
        prev_xyz = window.previous_xyz()
        x_prev = mlp_forward(Tensor(window.previous_features()), module.kp_previous.layers, training)
        nbrs = knn(current.xyz, prev_xyz, module.k)
        x_temp = vector_attention(module, x_cur, x_prev, current.xyz, prev_xyz, nbrs, training)
    return concat([x_temp, x_cur], axis=-1)
