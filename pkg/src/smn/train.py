"""Additive prediction assembly, per-event Huber + L1 loss, SGD with cosine
annealing warm restarts, and versioned JSON checkpoints.

The four head contributions are summed in a fixed order so the total is
bitwise reproducible. Training is single-threaded and fully seeded: the
per-epoch shuffle draws from a stateless stream keyed by (seed, epoch), so
resuming from a checkpoint replays the exact same event order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import backbone as bb
from . import diffcore as dc
from . import excitation as ex
from . import image as im
from .diffcore import DTensor
from .graph import WordGraph, vocab_hash

FORMAT_TAG = "smn-ckpt/1"
HEAD_NAMES = ("base", "self", "mutual", "image")

# seed-stream tag separating model init from other consumers of the run seed
_INIT_STREAM = 0x1117


class TrainError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionBreakdown:
    y_base: float
    y_self: float
    y_mutual: float
    y_image: float
    y_total: float  # ((base + self) + mutual) + image, fixed order

    def as_dict(self) -> dict:
        return {"y_base": self.y_base, "y_self": self.y_self,
                "y_mutual": self.y_mutual, "y_image": self.y_image,
                "y_total": self.y_total}


@dataclass
class TrainConfig:
    backbone: str = "gcn"
    depth: int = 2
    lr0: float = 0.01
    lambda1: float = 0.001
    lambda2: float = 0.001
    epochs: int = 30
    seed: int = 0
    huber_delta: float = 1.0
    pool_ratio: float = 0.5
    delta: float = 50.0
    t0: int = 10
    t_mult: int = 2
    heads: tuple = HEAD_NAMES
    image_hidden: int = 64
    image_final_relu: bool = False
    mutual_diagonal: bool = False  # literal all-pairs mutual sum

    def __post_init__(self):
        self.heads = tuple(self.heads)
        self.validate()

    def validate(self):
        if self.backbone not in ("gcn", "gat"):
            raise TrainError(f"backbone must be gcn or gat, got {self.backbone!r}")
        if self.depth < 1:
            raise TrainError("depth must be >= 1")
        if self.lr0 <= 0.0:
            raise TrainError("lr0 must be positive")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise TrainError("lambda terms must be nonnegative")
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if self.huber_delta <= 0.0:
            raise TrainError("huber_delta must be positive")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise TrainError("pool_ratio must be in (0, 1]")
        if not 0.0 < self.delta <= 100.0:
            raise TrainError("delta must be in (0, 100]")
        if self.t0 < 1 or self.t_mult < 1:
            raise TrainError("scheduler needs t0 >= 1 and t_mult >= 1")
        if not self.heads:
            raise TrainError("at least one head must be enabled")
        for h in self.heads:
            if h not in HEAD_NAMES:
                raise TrainError(f"unknown head {h!r}; valid: {', '.join(HEAD_NAMES)}")
        if self.image_hidden < 1:
            raise TrainError("image_hidden must be >= 1")

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone, "depth": self.depth, "lr0": self.lr0,
            "lambda1": self.lambda1, "lambda2": self.lambda2,
            "epochs": self.epochs, "seed": self.seed,
            "huber_delta": self.huber_delta, "pool_ratio": self.pool_ratio,
            "delta": self.delta, "t0": self.t0, "t_mult": self.t_mult,
            "heads": list(self.heads), "image_hidden": self.image_hidden,
            "image_final_relu": self.image_final_relu,
            "mutual_diagonal": self.mutual_diagonal,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**{**d, "heads": tuple(d["heads"])})


@dataclass
class ModelParams:
    backbone: str
    layers: list
    pooling: bb.PoolingParams
    projection: ex.ExcitationProjectionParams
    mutual: ex.MutualHeadParams
    self_head: ex.SelfHeadParams
    base: ex.BaseHeadParams
    image: im.ImageHeadParams | None

    def named(self) -> dict[str, DTensor]:
        """Stable name -> tensor map; order fixes checkpoint and SGD layout."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"backbone.{i}.w"] = layer.w
            if isinstance(layer, bb.GatLayerParams):
                out[f"backbone.{i}.a"] = layer.a
        out["pooling.theta"] = self.pooling.theta
        out["projection.w1"] = self.projection.w1
        out["projection.w2"] = self.projection.w2
        out["mutual.w_eta"] = self.mutual.w_eta
        out["mutual.w_gamma"] = self.mutual.w_gamma
        out["self.w_beta"] = self.self_head.w_beta
        out["base.w_mu"] = self.base.w_mu
        if self.image is not None:
            out["image.w1"] = self.image.w1
            out["image.b1"] = self.image.b1
            out["image.w2"] = self.image.w2
            out["image.b2"] = self.image.b2
        return out


def init_model(config: TrainConfig, f: int, fc: int | None) -> ModelParams:
    """Seeded parameter init with a fixed draw order. Image-head params are
    created whenever the corpus declares an image width, independent of the
    head toggle, so toggling heads never shifts the other draws."""
    rng = np.random.default_rng([config.seed, _INIT_STREAM])
    layer_cls = bb.GcnLayerParams if config.backbone == "gcn" else bb.GatLayerParams
    layers = [layer_cls.init(rng, f, f) for _ in range(config.depth)]
    pooling = bb.PoolingParams.init(rng, f, config.pool_ratio)
    projection = ex.ExcitationProjectionParams.init(rng, f)
    mutual = ex.MutualHeadParams.init(rng, f)
    self_head = ex.SelfHeadParams.init(rng, f, config.delta)
    base = ex.BaseHeadParams.init(rng, f)
    image = None
    if fc is not None:
        image = im.ImageHeadParams.init(rng, fc, config.image_hidden,
                                        config.image_final_relu)
    return ModelParams(backbone=config.backbone, layers=layers, pooling=pooling,
                       projection=projection, mutual=mutual, self_head=self_head,
                       base=base, image=image)


@dataclass
class SharedForward:
    """One backbone pass over the whole graph, shared by every event."""
    h_last: DTensor
    pool: bb.PoolingOutput
    h_hat: DTensor
    attention: list


def shared_forward(model: ModelParams, norm_adj, edge_mask, h0: np.ndarray,
                   idx_override: np.ndarray | None = None) -> SharedForward:
    h = DTensor.const(h0)
    attention = []
    for layer in model.layers:
        if isinstance(layer, bb.GatLayerParams):
            h, attn = bb.gat_forward(h, edge_mask, layer)
            attention.append(attn)
        else:
            h = bb.gcn_forward(h, norm_adj, layer.w)
    pool = bb.self_attention_pool(h, norm_adj, model.pooling, idx_override=idx_override)
    h_hat = ex.project_excitation(pool.h_tilde, model.projection)
    return SharedForward(h_last=h, pool=pool, h_hat=h_hat, attention=attention)


@dataclass
class EventForward:
    breakdown: PredictionBreakdown
    total: DTensor
    beta_scores: DTensor | None
    z: DTensor | None
    view: ex.EventView


def forward_event(event, model: ModelParams, shared: SharedForward, vocab,
                  heads=HEAD_NAMES, mutual_diagonal: bool = False) -> EventForward:
    for t in event.tokens:
        if t not in vocab.index_of:
            raise TrainError(
                f"event {event.id!r} token {t!r} missing from the model vocabulary; "
                "corpus and graph are out of sync")
    view = ex.build_event_view(event, vocab, shared.pool.idx, shared.pool.h_tilde,
                               shared.h_hat, shared.h_last)
    zero = lambda: DTensor.const([[0.0]])
    y_base = ex.base_excitation(view, model.base) if "base" in heads else zero()
    beta_scores = None
    if "self" in heads:
        y_self, beta_scores = ex.self_excitation(view, model.self_head)
    else:
        y_self = zero()
    z = None
    if "mutual" in heads:
        y_mutual, z = ex.mutual_excitation(view, model.mutual, mutual_diagonal)
    else:
        y_mutual = zero()
    if "image" in heads and model.image is not None:
        y_image = im.image_popularity(event.image_feature, model.image)
    else:
        y_image = zero()
    total = dc.add(dc.add(dc.add(y_base, y_self), y_mutual), y_image)
    breakdown = PredictionBreakdown(y_base=y_base.item(), y_self=y_self.item(),
                                    y_mutual=y_mutual.item(), y_image=y_image.item(),
                                    y_total=total.item())
    return EventForward(breakdown=breakdown, total=total,
                        beta_scores=beta_scores, z=z, view=view)


def loss_value(fwd: EventForward, y_true: float, config: TrainConfig) -> DTensor:
    """Huber(total, y) + lambda1*||beta||_1 + lambda2*||z||_1.

    The z penalty covers the event's distinct word pairs (j != k), matching
    the pair semantics of the mutual head.
    """
    total = dc.huber_loss(fwd.total, y_true, config.huber_delta)
    if fwd.beta_scores is not None and config.lambda1 != 0.0:
        l1 = dc.scale(dc.sum_all(dc.absolute(fwd.beta_scores)), config.lambda1)
        total = dc.add(total, l1)
    if fwd.z is not None and config.lambda2 != 0.0:
        k = fwd.z.shape[0]
        pairs = dc.hadamard(dc.absolute(fwd.z), DTensor.const(ex.offdiagonal_ones(k)))
        total = dc.add(total, dc.scale(dc.sum_all(pairs), config.lambda2))
    return total


def lr_schedule(epoch: int, t0: int = 10, t_mult: int = 2, lr0: float = 0.01) -> float:
    """Cosine annealing with warm restarts: cycle n spans t0 * t_mult^n epochs
    and the rate decays from lr0 to 0 within each cycle."""
    if t0 < 1 or t_mult < 1:
        raise TrainError("scheduler needs t0 >= 1 and t_mult >= 1")
    if lr0 <= 0.0:
        raise TrainError("lr0 must be positive")
    if epoch < 0:
        raise TrainError("epoch must be nonnegative")
    t_i, start = t0, 0
    while epoch >= start + t_i:
        start += t_i
        t_i *= t_mult
    t_cur = epoch - start
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t_cur / t_i))


@dataclass
class Checkpoint:
    config: TrainConfig
    epoch: int                      # epochs completed so far
    params: dict                    # name -> float64 ndarray
    mask: np.ndarray                # self-head mask as of the last trained epoch
    vocab_hash: str
    f: int
    fc: int | None
    pop_range: tuple

    def to_model(self) -> ModelParams:
        cfg = self.config
        layer_cls = bb.GcnLayerParams if cfg.backbone == "gcn" else bb.GatLayerParams
        layers = []
        for i in range(cfg.depth):
            w = DTensor.param(self.params[f"backbone.{i}.w"].copy())
            if cfg.backbone == "gat":
                layers.append(bb.GatLayerParams(w=w, a=DTensor.param(
                    self.params[f"backbone.{i}.a"].copy())))
            else:
                layers.append(layer_cls(w=w))
        image = None
        if "image.w1" in self.params:
            image = im.ImageHeadParams(
                w1=DTensor.param(self.params["image.w1"].copy()),
                b1=DTensor.param(self.params["image.b1"].copy()),
                w2=DTensor.param(self.params["image.w2"].copy()),
                b2=DTensor.param(self.params["image.b2"].copy()),
                final_relu=cfg.image_final_relu,
            )
        return ModelParams(
            backbone=cfg.backbone,
            layers=layers,
            pooling=bb.PoolingParams(theta=DTensor.param(self.params["pooling.theta"].copy()),
                                     k=cfg.pool_ratio),
            projection=ex.ExcitationProjectionParams(
                w1=DTensor.param(self.params["projection.w1"].copy()),
                w2=DTensor.param(self.params["projection.w2"].copy())),
            mutual=ex.MutualHeadParams(
                w_eta=DTensor.param(self.params["mutual.w_eta"].copy()),
                w_gamma=DTensor.param(self.params["mutual.w_gamma"].copy())),
            self_head=ex.SelfHeadParams(w_beta=DTensor.param(self.params["self.w_beta"].copy()),
                                        delta=cfg.delta, mask=self.mask.copy()),
            base=ex.BaseHeadParams(w_mu=DTensor.param(self.params["base.w_mu"].copy())),
            image=image,
        )


def snapshot(model: ModelParams, config: TrainConfig, epoch: int, vhash: str,
             f: int, fc: int | None, pop_range) -> Checkpoint:
    params = {name: t.values.copy() for name, t in model.named().items()}
    return Checkpoint(config=config, epoch=epoch, params=params,
                      mask=model.self_head.mask.copy(), vocab_hash=vhash,
                      f=f, fc=fc, pop_range=(float(pop_range[0]), float(pop_range[1])))


def save_checkpoint(ckpt: Checkpoint, path):
    doc = {
        "format": FORMAT_TAG,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "vocab_hash": ckpt.vocab_hash,
        "f": ckpt.f,
        "fc": ckpt.fc,
        "pop_min": ckpt.pop_range[0],
        "pop_max": ckpt.pop_range[1],
        "mask": [float(v) for v in ckpt.mask.reshape(-1)],
        "params": {name: {"shape": list(arr.shape),
                          "data": [float(v) for v in arr.reshape(-1)]}
                   for name, arr in ckpt.params.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a {FORMAT_TAG} checkpoint")
    config = TrainConfig.from_dict(doc["config"])
    params = {}
    for name, entry in doc["params"].items():
        params[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    mask = np.array(doc["mask"], dtype=np.float64).reshape(params["self.w_beta"].shape)
    return Checkpoint(config=config, epoch=int(doc["epoch"]), params=params,
                      mask=mask, vocab_hash=doc["vocab_hash"], f=int(doc["f"]),
                      fc=None if doc["fc"] is None else int(doc["fc"]),
                      pop_range=(float(doc["pop_min"]), float(doc["pop_max"])))


def _epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    # stateless stream per epoch keeps resume bitwise without serializing RNG
    return np.random.default_rng([seed, epoch]).permutation(count)


def _sgd_step(model: ModelParams, lr: float):
    for tensor in model.named().values():
        if tensor.grad is not None:
            tensor.values = tensor.values - lr * tensor.grad
        tensor.zero_grad()


def evaluate_loss(events, model: ModelParams, shared: SharedForward, vocab,
                  config: TrainConfig):
    """Mean loss and mean |y_hat - y| over a fixed parameter snapshot."""
    total_loss = 0.0
    total_abs = 0.0
    for ev in events:
        fwd = forward_event(ev, model, shared, vocab, config.heads,
                            config.mutual_diagonal)
        total_loss += loss_value(fwd, ev.popularity, config).item()
        total_abs += abs(fwd.breakdown.y_total - ev.popularity)
    n = max(len(events), 1)
    return total_loss / n, total_abs / n


def train(train_events, val_events, graph: WordGraph, config: TrainConfig,
          fc: int | None, pop_range, resume: Checkpoint | None = None):
    """Per-event SGD over the training split.

    Each epoch refreshes the sparsity mask, walks the events in a seeded
    shuffle, and takes one gradient step per event. Returns the final
    checkpoint and a per-epoch log (epoch, lr, train_loss, val_loss, val_mse).
    """
    vhash = vocab_hash(graph.vocab)
    if resume is not None:
        if resume.vocab_hash != vhash:
            raise CheckpointError("checkpoint vocabulary does not match the graph")
        expect = {**resume.config.to_dict(), "epochs": config.epochs}
        if expect != config.to_dict():
            raise TrainError("resume config differs from checkpoint (beyond epochs)")
        model = resume.to_model()
        start_epoch = resume.epoch
    else:
        model = init_model(config, graph.f, fc)
        start_epoch = 0
    norm_adj = bb.normalize_adjacency(graph.adjacency)
    edge_mask = bb.gat_edge_mask(graph.adjacency) if config.backbone == "gat" else None

    log = []
    for epoch in range(start_epoch, config.epochs):
        model.self_head.refresh_mask()
        lr = lr_schedule(epoch, config.t0, config.t_mult, config.lr0)
        running = 0.0
        for j in _epoch_order(config.seed, epoch, len(train_events)):
            ev = train_events[int(j)]
            with dc.Tape() as tape:
                shared = shared_forward(model, norm_adj, edge_mask, graph.h0)
                fwd = forward_event(ev, model, shared, graph.vocab, config.heads,
                                    config.mutual_diagonal)
                step_loss = loss_value(fwd, ev.popularity, config)
                tape.backward(step_loss)
            running += step_loss.item()
            _sgd_step(model, lr)
        shared = shared_forward(model, norm_adj, edge_mask, graph.h0)
        val_loss, val_mse = evaluate_loss(val_events, model, shared, graph.vocab, config)
        log.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": running / max(len(train_events), 1),
            "val_loss": val_loss,
            "val_mse": val_mse,
        })
    ckpt = snapshot(model, config, config.epochs, vhash, graph.f, fc, pop_range)
    return ckpt, log


def write_log(log, path):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True))
            fh.write("\n")


class Predictor:
    """Inference-time wrapper: one backbone pass, then per-event heads."""

    def __init__(self, model: ModelParams, graph: WordGraph, config: TrainConfig):
        self.model = model
        self.graph = graph
        self.config = config
        norm_adj = bb.normalize_adjacency(graph.adjacency)
        edge_mask = bb.gat_edge_mask(graph.adjacency) if config.backbone == "gat" else None
        self.shared = shared_forward(model, norm_adj, edge_mask, graph.h0)

    def breakdown(self, event) -> PredictionBreakdown:
        return forward_event(event, self.model, self.shared, self.graph.vocab,
                             self.config.heads, self.config.mutual_diagonal).breakdown

    def word_scores(self) -> np.ndarray:
        """Masked self-excitation score of every graph node; words dropped by
        pooling have zero features and land exactly on gelu(0) = 0."""
        w_eff = dc.ste_mask_apply(self.model.self_head.w_beta, self.model.self_head.mask)
        return dc.gelu(dc.matmul(self.shared.pool.h_tilde, w_eff)).values[:, 0]

    def explain(self, event, top: int) -> dict:
        scores = self.word_scores()
        seen = []
        for t in event.tokens:
            if t not in seen:
                seen.append(t)
        ranked = sorted(seen, key=lambda t: (-scores[self.graph.vocab.index_of[t]], t))
        fwd = self.breakdown(event)
        return {
            "id": event.id,
            "components": fwd.as_dict(),
            "words": [{"word": t, "score": float(scores[self.graph.vocab.index_of[t]])}
                      for t in ranked[:top]],
        }
