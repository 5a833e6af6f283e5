"""Command-line pipeline: build-graph, train, evaluate, predict, explain,
and synth (planted synthetic corpus generator).

Every command exits 0 on success and 2 with a single-line `error: ...`
message otherwise. All randomness flows from explicit --seed flags.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import corpus as cp
from . import graph as gr
from . import metrics as mt
from . import synth as sy
from . import train as tr


def _parse_ratios(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise cp.CorpusError(f"split ratios need three comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_heads(text: str) -> tuple:
    return tuple(h.strip() for h in text.split(",") if h.strip())


def cmd_build_graph(args) -> None:
    events, _ = cp.load_corpus(args.corpus)
    embeddings = gr.read_semb(args.embeddings)
    g = gr.build_graph(events, embeddings, seed=args.seed)
    gr.save_graph(args.out, g)
    print(f"nodes={g.vocab.n} edges={g.edge_count} f={g.f}")


def _config_from_args(args) -> tr.TrainConfig:
    return tr.TrainConfig(
        backbone=args.backbone,
        depth=args.depth,
        lr0=args.lr,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        epochs=args.epochs,
        seed=args.seed,
        huber_delta=args.huber_delta,
        pool_ratio=args.pool_ratio,
        delta=args.delta,
        t0=args.t0,
        t_mult=args.t_mult,
        heads=_parse_heads(args.heads),
        image_hidden=args.image_hidden,
        image_final_relu=args.image_final_relu,
        mutual_diagonal=args.mutual_diagonal,
    )


def cmd_train(args) -> None:
    config = _config_from_args(args)  # validates before any compute
    events, header = cp.load_corpus(args.corpus)
    graph = gr.load_graph(args.graph)
    ratios = _parse_ratios(args.split_ratios)
    spl = cp.split(events, ratios, args.seed)
    train_events, pop_range = cp.normalize_popularity(cp.select(events, spl.train_ids))
    val_events = cp.apply_popularity_range(cp.select(events, spl.val_ids), *pop_range)
    resume = tr.load_checkpoint(args.resume) if args.resume else None
    ckpt, log = tr.train(train_events, val_events, graph, config, header.fc,
                         pop_range, resume=resume)
    tr.save_checkpoint(ckpt, args.out)
    tr.write_log(log, args.log if args.log else f"{args.out}.log.jsonl")
    if val_events:
        predictor = tr.Predictor(ckpt.to_model(), graph, config)
        results = [mt.EventScore(ev.id, ev.popularity, predictor.breakdown(ev).y_total)
                   for ev in val_events]
        print(json.dumps(mt.full_report(results), sort_keys=True))
    else:
        print(json.dumps({"warning": "empty validation split"}))


def _load_for_inference(args):
    ckpt = tr.load_checkpoint(args.ckpt)
    graph = gr.load_graph(args.graph)
    if gr.vocab_hash(graph.vocab) != ckpt.vocab_hash:
        raise tr.CheckpointError(
            "vocabulary hash mismatch between checkpoint and graph")
    events, _ = cp.load_corpus(args.corpus)
    events = cp.apply_popularity_range(events, *ckpt.pop_range)
    predictor = tr.Predictor(ckpt.to_model(), graph, ckpt.config)
    return ckpt, graph, events, predictor


def _pick_split(events, split_name: str, ratios, seed: int):
    if split_name == "all":
        return events
    spl = cp.split(events, ratios, seed)
    ids = {"train": spl.train_ids, "val": spl.val_ids, "test": spl.test_ids}[split_name]
    return cp.select(events, ids)


def cmd_evaluate(args) -> None:
    ckpt, _, events, predictor = _load_for_inference(args)
    chosen = _pick_split(events, args.split, _parse_ratios(args.split_ratios),
                         ckpt.config.seed)
    if not chosen:
        raise mt.MetricsError(f"split {args.split!r} selected no events")
    results = [mt.EventScore(ev.id, ev.popularity, predictor.breakdown(ev).y_total)
               for ev in chosen]
    report = mt.full_report(results)
    report["mse"] = report["mse_sq"] if args.mse_squared else report["mse_abs"]
    print(json.dumps(report, sort_keys=True))


def cmd_predict(args) -> None:
    ckpt, _, events, predictor = _load_for_inference(args)
    lo, hi = ckpt.pop_range
    for ev in events:
        b = predictor.breakdown(ev)
        line = {"id": ev.id, **b.as_dict(),
                "popularity_raw": cp.denormalize(b.y_total, lo, hi)}
        print(json.dumps(line, sort_keys=True))


def cmd_explain(args) -> None:
    _, _, events, predictor = _load_for_inference(args)
    for ev in events:
        print(json.dumps(predictor.explain(ev, args.top),
                         sort_keys=True, ensure_ascii=False))


def cmd_synth(args) -> None:
    cfg = sy.SynthConfig(
        events=args.events, vocab=args.vocab, seed=args.seed,
        emb_dim=args.emb_dim, min_words=args.min_words, max_words=args.max_words,
        base=args.base, b_max=args.b_max, b_jitter=args.b_jitter,
        eta=args.eta, gamma=args.gamma,
        fc=args.fc, image_scale=args.image_scale, noise=args.noise,
        topic_size=args.topic_size, topic_spread=args.topic_spread,
        topic_share=args.topic_share,
    )
    sy.emit(cfg, args.out, emb_out=args.emb_out, planted_out=args.planted_out)
    print(f"events={cfg.events} vocab={cfg.vocab} out={args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smn",
        description="Interpretable web-event popularity prediction over a PMI word graph.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build the PMI word graph from a corpus")
    p.add_argument("--corpus", required=True, help="events JSONL file")
    p.add_argument("--embeddings", required=True, help="word embeddings (.semb)")
    p.add_argument("--out", required=True, help="output graph JSON path")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for out-of-vocabulary embedding rows (default 0)")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--graph", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="training-log JSONL (default <out>.log.jsonl)")
    p.add_argument("--backbone", choices=("gcn", "gat"), default="gcn")
    p.add_argument("--depth", type=int, default=2, help="backbone layer count (default 2)")
    p.add_argument("--lr", type=float, default=0.01, help="base learning rate (default 0.01)")
    p.add_argument("--lambda1", type=float, default=0.001,
                   help="L1 weight on self-excitation scores (default 0.001)")
    p.add_argument("--lambda2", type=float, default=0.001,
                   help="L1 weight on pairwise mutual scores (default 0.001)")
    p.add_argument("--pool-ratio", type=float, default=0.5,
                   help="fraction of graph nodes retained by pooling (default 0.5)")
    p.add_argument("--delta", type=float, default=50.0,
                   help="sparsity percentile for the self-excitation mask (default 50)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t0", type=int, default=10, help="first cosine cycle length (default 10)")
    p.add_argument("--t-mult", type=int, default=2, help="cycle length multiplier (default 2)")
    p.add_argument("--huber-delta", type=float, default=1.0)
    p.add_argument("--heads", default="base,self,mutual,image",
                   help="comma-separated head toggles (default all four)")
    p.add_argument("--image-hidden", type=int, default=64,
                   help="image MLP hidden width (default 64)")
    p.add_argument("--image-final-relu", action="store_true",
                   help="apply relu to the image MLP output layer too")
    p.add_argument("--mutual-diagonal", action="store_true",
                   help="include j = k terms in the mutual-excitation sum")
    p.add_argument("--split-ratios", default="0.7,0.15,0.15",
                   help="train,val,test fractions (default 0.7,0.15,0.15)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, fn in (("evaluate", cmd_evaluate), ("predict", cmd_predict),
                     ("explain", cmd_explain)):
        p = sub.add_parser(name)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--graph", required=True,
                       help="graph the checkpoint was trained against")
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "val", "test", "all"),
                           default="test")
            p.add_argument("--split-ratios", default="0.7,0.15,0.15",
                           help="must match the ratios used at training time")
            p.add_argument("--mse-squared", action="store_true",
                           help="report the squared form under the headline 'mse' key")
        if name == "explain":
            p.add_argument("--top", type=int, default=8,
                           help="words listed per event (default 8)")
        p.set_defaults(func=fn)

    p = sub.add_parser("synth", help="generate a planted-model synthetic corpus")
    p.add_argument("--events", type=int, default=200)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="events JSONL output path")
    p.add_argument("--emb-out", default=None,
                   help="also write the planted word embeddings (.semb)")
    p.add_argument("--planted-out", default=None,
                   help="planted-weights sidecar (default <out>.planted.json)")
    p.add_argument("--emb-dim", type=int, default=8)
    p.add_argument("--min-words", type=int, default=3)
    p.add_argument("--max-words", type=int, default=8)
    p.add_argument("--base", type=float, default=0.1)
    p.add_argument("--b-max", type=float, default=0.3,
                   help="largest planted topic weight level (default 0.3)")
    p.add_argument("--b-jitter", type=float, default=0.01,
                   help="per-word deviation from the topic level (default 0.01)")
    p.add_argument("--eta", type=float, default=0.005)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--fc", type=int, default=None,
                   help="image feature width; omit for a text-only corpus")
    p.add_argument("--image-scale", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--topic-size", type=int, default=5,
                   help="words per planted topic (default 5)")
    p.add_argument("--topic-spread", type=float, default=0.25,
                   help="embedding scatter around each topic center (default 0.25)")
    p.add_argument("--topic-share", type=float, default=0.85,
                   help="fraction of an event's words drawn from its topic (default 0.85)")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except BrokenPipeError:
        return 0  # downstream reader closed early (e.g. piping into head)
    except (cp.CorpusError, gr.GraphError, gr.SembError, tr.TrainError,
            tr.CheckpointError, mt.MetricsError, sy.SynthError,
            ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
