"""Per-event base, self and mutual excitation heads over pooled word
features, plus the percentile sparsity mask on the self-excitation weights.

Event-level vectors are arithmetic means of the event's retained-word rows.
An event whose words were all dropped by pooling falls back to the mean of
its unpooled word features for the base head and contributes zero to the
self and mutual heads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import DTensor
from .backbone import init_weight
from .util import ceil_ratio, top_indices


@dataclass
class ExcitationProjectionParams:
    w1: DTensor  # F x F
    w2: DTensor  # F x F

    @staticmethod
    def init(rng: np.random.Generator, f: int) -> "ExcitationProjectionParams":
        return ExcitationProjectionParams(w1=init_weight(rng, f, f),
                                          w2=init_weight(rng, f, f))


@dataclass
class MutualHeadParams:
    w_eta: DTensor    # F x 1
    w_gamma: DTensor  # F x 1

    @staticmethod
    def init(rng: np.random.Generator, f: int) -> "MutualHeadParams":
        return MutualHeadParams(w_eta=init_weight(rng, f, 1),
                                w_gamma=init_weight(rng, f, 1))


@dataclass
class SelfHeadParams:
    w_beta: DTensor               # F x 1
    delta: float                  # sparsity percentage in (0, 100]
    mask: np.ndarray = field(default=None)  # binary F x 1, frozen between refreshes

    def __post_init__(self):
        if not 0.0 < self.delta <= 100.0:
            raise ValueError(f"delta must be in (0, 100], got {self.delta}")
        if self.mask is None:
            self.mask = np.ones_like(self.w_beta.values)

    @staticmethod
    def init(rng: np.random.Generator, f: int, delta: float) -> "SelfHeadParams":
        params = SelfHeadParams(w_beta=init_weight(rng, f, 1), delta=delta)
        params.refresh_mask()
        return params

    def refresh_mask(self):
        self.mask = refresh_mask(self.w_beta.values, self.delta)


@dataclass
class BaseHeadParams:
    w_mu: DTensor  # F x 1

    @staticmethod
    def init(rng: np.random.Generator, f: int) -> "BaseHeadParams":
        return BaseHeadParams(w_mu=init_weight(rng, f, 1))


@dataclass
class EventView:
    """One event's slice of the pooled graph features."""
    event_id: str
    members: np.ndarray                 # node indices retained by pooling, ascending
    word_features: DTensor | None       # member rows of H-tilde, k x F
    excited_features: DTensor | None    # member rows of H-hat, k x F
    event_vector: DTensor               # 1 x F
    excited_event_vector: DTensor | None
    pooled_out: bool                    # True when every word was dropped


def build_event_view(event, vocab, pool_idx: np.ndarray, h_tilde: DTensor,
                     h_hat: DTensor, h_unpooled: DTensor) -> EventView:
    """Gather the event's member rows; duplicates in the token list collapse
    to one graph node."""
    node_ids = sorted({vocab.index_of[t] for t in event.tokens})
    retained = set(int(i) for i in pool_idx)
    members = np.array([i for i in node_ids if i in retained], dtype=np.intp)
    if members.size:
        word_features = dc.gather_rows(h_tilde, members)
        excited_features = dc.gather_rows(h_hat, members)
        return EventView(
            event_id=event.id,
            members=members,
            word_features=word_features,
            excited_features=excited_features,
            event_vector=dc.mean_rows(word_features),
            excited_event_vector=dc.mean_rows(excited_features),
            pooled_out=False,
        )
    fallback = dc.mean_rows(dc.gather_rows(h_unpooled, np.array(node_ids, dtype=np.intp)))
    return EventView(
        event_id=event.id,
        members=members,
        word_features=None,
        excited_features=None,
        event_vector=fallback,
        excited_event_vector=None,
        pooled_out=True,
    )


def project_excitation(h_tilde: DTensor, params: ExcitationProjectionParams) -> DTensor:
    """Two-layer relu projection into the excitation space; zero rows stay zero."""
    return dc.relu(dc.matmul(dc.relu(dc.matmul(h_tilde, params.w1)), params.w2))


def offdiagonal_ones(k: int) -> np.ndarray:
    return np.ones((k, k)) - np.eye(k)


def pairwise_sq_dists(hm: DTensor) -> tuple[DTensor, DTensor]:
    """All-pairs squared distances of the rows of hm via the inner-product
    expansion ||h_j||^2 + ||h_k||^2 - 2 z_jk; returns (distances, z)."""
    sq = dc.row_sum(dc.hadamard(hm, hm))     # k x 1 squared norms
    z = dc.matmul(hm, dc.transpose(hm))      # k x k inner products
    return dc.sub(dc.add(sq, dc.transpose(sq)), dc.scale(z, 2.0)), z


def mutual_excitation(view: EventView, params: MutualHeadParams,
                      include_diagonal: bool = False) -> tuple[DTensor, DTensor | None]:
    """Exponential pairwise kernel over the event's retained words.

    Returns (scalar contribution, pairwise inner-product matrix z). The sum
    runs over ordered pairs j != k, so events with fewer than two retained
    words contribute zero and carry no z. ``include_diagonal`` switches to
    the literal sum over all (j, k) including j = k.
    """
    k = int(view.members.size)
    if k < (1 if include_diagonal else 2):
        return DTensor.const([[0.0]]), None
    eta = dc.gelu(dc.matmul(view.excited_event_vector, params.w_eta))
    gamma = dc.gelu(dc.matmul(view.excited_event_vector, params.w_gamma))
    dist, z = pairwise_sq_dists(view.excited_features)
    kernel = dc.exp(dc.neg(dc.hadamard(dist, gamma)))
    pair_mask = np.ones((k, k)) if include_diagonal else offdiagonal_ones(k)
    total = dc.sum_all(dc.hadamard(kernel, DTensor.const(pair_mask)))
    return dc.hadamard(eta, total), z


def self_excitation(view: EventView,
                    params: SelfHeadParams) -> tuple[DTensor, DTensor | None]:
    """Sum of per-word scores through the masked weight vector.

    The mask is applied straight-through: forward uses w_beta * mask, the
    backward pass delivers the upstream gradient to w_beta unchanged.
    """
    if view.members.size == 0:
        return DTensor.const([[0.0]]), None
    w_eff = dc.ste_mask_apply(params.w_beta, params.mask)
    scores = dc.gelu(dc.matmul(view.word_features, w_eff))  # k x 1
    return dc.sum_all(scores), scores


def base_excitation(view: EventView, params: BaseHeadParams) -> DTensor:
    return dc.gelu(dc.matmul(view.event_vector, params.w_mu))


def refresh_mask(w_beta_values: np.ndarray, delta: float) -> np.ndarray:
    """Binary mask with exactly ceil((delta/100) * F) ones at the largest
    entries of w_beta; threshold ties go to the lower index."""
    if not 0.0 < delta <= 100.0:
        raise ValueError(f"delta must be in (0, 100], got {delta}")
    flat = np.asarray(w_beta_values).reshape(-1)
    m = ceil_ratio(delta / 100.0, flat.size)
    chosen = top_indices(flat, m)
    mask = np.zeros_like(flat)
    mask[chosen] = 1.0
    return mask.reshape(np.asarray(w_beta_values).shape)
