"""Graph feature extractor: normalized-adjacency GCN layers, an optional
single-head GAT, and self-attention pooling with top-rank node retention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from .diffcore import DTensor
from .util import ceil_ratio, top_indices

# large negative logit that underflows to zero weight after exp
_MASK_LOGIT = -1e30


def normalize_adjacency(a) -> sp.csr_matrix:
    """D^(-1/2) (A + I) D^(-1/2); built from the upper triangle and mirrored
    so stored (i,j) and (j,i) values are bitwise equal."""
    a = sp.csr_matrix(a)
    n = a.shape[0]
    if n and np.any(a.diagonal() != 0.0):
        raise ValueError("adjacency must have a zero diagonal before self-loops")
    at = (a + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(at.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    up = sp.triu(at).tocoo()
    vals = dinv[up.row] * up.data * dinv[up.col]
    off = up.row != up.col
    rows = np.concatenate([up.row, up.col[off]])
    cols = np.concatenate([up.col, up.row[off]])
    data = np.concatenate([vals, vals[off]])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def init_weight(rng: np.random.Generator, f_in: int, f_out: int) -> DTensor:
    """Seeded uniform(-1/sqrt(f_in), +1/sqrt(f_in)) init."""
    bound = 1.0 / math.sqrt(f_in)
    return DTensor.param(rng.uniform(-bound, bound, size=(f_in, f_out)))


@dataclass
class GcnLayerParams:
    w: DTensor

    @staticmethod
    def init(rng: np.random.Generator, f_in: int, f_out: int) -> "GcnLayerParams":
        return GcnLayerParams(w=init_weight(rng, f_in, f_out))


@dataclass
class GatLayerParams:
    w: DTensor            # F_in x F_out
    a: DTensor            # 2*F_out x 1 attention vector
    leaky_slope: float = 0.2

    @staticmethod
    def init(rng: np.random.Generator, f_in: int, f_out: int) -> "GatLayerParams":
        return GatLayerParams(w=init_weight(rng, f_in, f_out),
                              a=init_weight(rng, 2 * f_out, 1))


@dataclass
class PoolingParams:
    theta: DTensor        # F x F score projection
    k: float              # pooling ratio in (0, 1]

    def __post_init__(self):
        if not 0.0 < self.k <= 1.0:
            raise ValueError(f"pooling ratio k must be in (0, 1], got {self.k}")

    @staticmethod
    def init(rng: np.random.Generator, f: int, k: float) -> "PoolingParams":
        return PoolingParams(theta=init_weight(rng, f, f), k=k)


@dataclass
class PoolingOutput:
    idx: np.ndarray       # retained node indices, ascending
    scores: DTensor       # S, N x F
    s_mask: DTensor       # S with dropped rows zeroed
    h_tilde: DTensor      # masked features, N x F


def gcn_forward(h: DTensor, norm_adj, w: DTensor) -> DTensor:
    return dc.relu(dc.const_matmul(norm_adj, dc.matmul(h, w)))


def gat_edge_mask(adjacency) -> np.ndarray:
    """Dense boolean neighborhoods: positive-weight edges plus self-loops."""
    mask = np.asarray((adjacency != 0).todense()).astype(bool)
    np.fill_diagonal(mask, True)
    return mask


def gat_forward(h: DTensor, edge_mask: np.ndarray,
                params: GatLayerParams) -> tuple[DTensor, DTensor]:
    """Single-head attention aggregation; returns (features, attention).

    Attention weights of each node sum to 1 over its neighborhood and are
    exactly zero elsewhere.
    """
    n = h.shape[0]
    f_out = params.w.shape[1]
    hw = dc.matmul(h, params.w)
    a_src = dc.gather_rows(params.a, np.arange(f_out))
    a_dst = dc.gather_rows(params.a, np.arange(f_out, 2 * f_out))
    s = dc.matmul(hw, a_src)                      # N x 1
    d = dc.matmul(hw, a_dst)                      # N x 1
    logits = dc.leaky_relu(dc.add(s, dc.transpose(d)), params.leaky_slope)
    # push non-edges to an underflowing logit; shift by the detached row max
    # over edges for stability (softmax is shift-invariant per row)
    masked = dc.add(logits, DTensor.const(np.where(edge_mask, 0.0, _MASK_LOGIT)))
    row_max = np.max(np.where(edge_mask, logits.values, -np.inf), axis=1, keepdims=True)
    ex = dc.exp(dc.sub(masked, DTensor.const(row_max)))
    attn = dc.divide(ex, dc.row_sum(ex))          # rows sum to 1
    out = dc.relu(dc.matmul(attn, hw))
    assert out.shape == (n, f_out)
    return out, attn


def self_attention_pool(h: DTensor, norm_adj, params: PoolingParams,
                        idx_override: np.ndarray | None = None) -> PoolingOutput:
    """Score nodes by graph convolution, retain the top ceil(kN) by row-sum
    of the score matrix, and mask the features of dropped nodes to zero.

    The discrete ranking carries no gradient; retained rows stay
    differentiable through the scores. ``idx_override`` pins the retained
    set (used to hold the selection fixed during finite-difference checks).
    """
    n = h.shape[0]
    scores = dc.sigmoid(dc.const_matmul(norm_adj, dc.matmul(h, params.theta)))
    if idx_override is not None:
        idx = np.sort(np.asarray(idx_override, dtype=np.intp))
    else:
        keys = scores.values.sum(axis=1)
        idx = top_indices(keys, ceil_ratio(params.k, n))
    indicator = np.zeros((n, 1))
    indicator[idx] = 1.0
    s_mask = dc.hadamard(scores, DTensor.const(indicator))
    h_tilde = dc.hadamard(h, s_mask)
    return PoolingOutput(idx=idx, scores=scores, s_mask=s_mask, h_tilde=h_tilde)
