"""Command-line entry point.

Subcommands: gen-data, train, train-dist, build-graph, decode, sweep,
bench-rtf. Each takes a JSON config (all seeds explicit; --seed
overrides). Exit codes: 0 success, 1 usage/config error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import decoder as dec
from . import distsim, report
from .am import ModelConfig, ModelParams, load_model, save_model
from .trainer import TrainConfig, count_priors, count_self_loop_probs, \
    prepare_dataset, train_ce

DEFAULT_HIDDEN_DIM = 96
DEFAULT_FC_DIM = 48
FRAME_SECONDS = 0.01  # synthetic frames stand for a 10 ms hop


class UsageError(ValueError):
    pass


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from e


def _gen_config(cfg: dict, seed_override) -> corpus_mod.GenConfig:
    fields = {k: v for k, v in cfg.items()
              if k in corpus_mod.GenConfig.__dataclass_fields__}
    if seed_override is not None:
        fields["seed"] = seed_override
    try:
        return corpus_mod.GenConfig(**fields)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad gen config: {e}") from e


def _train_config(cfg: dict, seed_override) -> TrainConfig:
    fields = {k: v for k, v in cfg.items()
              if k in TrainConfig.__dataclass_fields__}
    if seed_override is not None:
        fields["seed"] = seed_override
    try:
        return TrainConfig(**fields)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad train config: {e}") from e


def cmd_gen_data(args) -> int:
    cfg = _load_json(args.config)
    gen_cfg = _gen_config(cfg, args.seed)
    train_frac = float(cfg.get("train_frac", 0.8))
    split_seed = int(cfg.get("split_seed", gen_cfg.seed + 1))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    full = corpus_mod.generate(gen_cfg)
    train, test = corpus_mod.split(full, train_frac, split_seed)
    corpus_mod.save_corpus(train, out_dir / "train.sdco")
    corpus_mod.save_corpus(test, out_dir / "test.sdco")
    corpus_mod.save_sidecar(gen_cfg, out_dir / "gen_config.json")
    print(f"wrote {len(train.utterances)} train / {len(test.utterances)} "
          f"test utterances to {out_dir}")
    return 0


def _model_config(cfg: dict, input_dim: int, num_states: int) -> ModelConfig:
    return ModelConfig(
        input_dim=input_dim,
        hidden_dim=int(cfg.get("hidden_dim", DEFAULT_HIDDEN_DIM)),
        fc_dim=int(cfg.get("fc_dim", DEFAULT_FC_DIM)),
        num_states=num_states,
        num_layers=int(cfg.get("num_layers", 2)),
    )


def _write_train_log(path, result):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss", "frames_processed",
                         "wall_seconds"])
        for e, (loss, frames, wall) in enumerate(zip(
                result.epoch_losses, result.frames_processed,
                result.epoch_seconds)):
            writer.writerow([e, repr(loss), frames, repr(wall)])


def _save_priors(path, priors: np.ndarray, fs: int):
    with open(path, "w") as f:
        json.dump({"fs": fs, "priors": list(priors)}, f)
        f.write("\n")


def _load_priors(path) -> np.ndarray:
    with open(path) as f:
        return np.array(json.load(f)["priors"])


def priors_path(model_path) -> Path:
    return Path(str(model_path) + ".priors.json")


def cmd_train(args) -> int:
    cfg = _load_json(args.config)
    train_cfg = _train_config(cfg, args.seed)
    train_corpus = corpus_mod.load_corpus(args.train_corpus)
    dataset = prepare_dataset(train_corpus.utterances, train_cfg.fs)
    model_cfg = _model_config(cfg, train_cfg.fs * train_corpus.feature_dim,
                              train_corpus.num_states)
    init = ModelParams.init(model_cfg, train_cfg.seed)
    result = train_ce(init, dataset, train_cfg)
    save_model(result.params, args.model_out)
    priors = count_priors(train_corpus.all_labels(),
                          train_corpus.num_states, fs=train_cfg.fs)
    _save_priors(priors_path(args.model_out), priors, train_cfg.fs)
    if args.log_out:
        _write_train_log(args.log_out, result)
    print(f"trained fs={train_cfg.fs}: epoch losses "
          + ", ".join(f"{x:.4f}" for x in result.epoch_losses))
    return 0


def cmd_train_dist(args) -> int:
    cfg = _load_json(args.config)
    train_cfg = _train_config(cfg, args.seed)
    bmuf_fields = {k: v for k, v in cfg.items()
                   if k in distsim.BmufConfig.__dataclass_fields__}
    try:
        bmuf_cfg = distsim.BmufConfig(**bmuf_fields)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad BMUF config: {e}") from e
    train_corpus = corpus_mod.load_corpus(args.train_corpus)
    dataset = prepare_dataset(train_corpus.utterances, train_cfg.fs)
    probe = None
    if args.probe_corpus:
        probe_corpus = corpus_mod.load_corpus(args.probe_corpus)
        probe = prepare_dataset(probe_corpus.utterances, train_cfg.fs)
    model_cfg = _model_config(cfg, train_cfg.fs * train_corpus.feature_dim,
                              train_corpus.num_states)
    init = ModelParams.init(model_cfg, train_cfg.seed)
    result = distsim.train_distributed(init, dataset, train_cfg, bmuf_cfg,
                                       probe_set=probe)
    save_model(result.global_params, args.model_out)
    if args.ema_out:
        save_model(result.ema_params, args.ema_out)
    priors = count_priors(train_corpus.all_labels(),
                          train_corpus.num_states, fs=train_cfg.fs)
    _save_priors(priors_path(args.model_out), priors, train_cfg.fs)
    if args.log_out:
        with open(args.log_out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["block_index", "probe_loss_global",
                             "probe_loss_ema", "wall_seconds"])
            for row in result.block_log:
                writer.writerow([row.block_index,
                                 repr(row.probe_loss_global),
                                 repr(row.probe_loss_ema),
                                 repr(row.wall_seconds)])
    print(f"distributed training done: {len(result.block_log)} blocks, "
          f"{bmuf_cfg.num_workers} workers")
    return 0


def build_graph_from_corpus(train_corpus: corpus_mod.Corpus
                            ) -> dec.DecodingGraph:
    bigram = dec.estimate_bigram(train_corpus.transcripts(),
                                 train_corpus.num_words)
    self_loops = count_self_loop_probs(train_corpus.all_labels(),
                                       train_corpus.num_states)
    return dec.build_graph(train_corpus.lexicon(), bigram, self_loops,
                           train_corpus.num_states)


def cmd_build_graph(args) -> int:
    train_corpus = corpus_mod.load_corpus(args.train_corpus)
    graph = build_graph_from_corpus(train_corpus)
    dec.save_graph(graph, args.graph_out)
    print(f"graph: {graph.num_nodes} nodes, {len(graph.arcs)} arcs, "
          f"digest {graph.digest()[:12]}")
    return 0


def run_decode(test_corpus, model, priors, graph, decode_cfg
               ) -> tuple[list[dec.DecodeResult], float, float]:
    """Decode a corpus; returns (results, error rate, rtf)."""
    results = [dec.decode(u.features, model, priors, graph, decode_cfg,
                          FRAME_SECONDS)
               for u in test_corpus.utterances]
    err = dec.error_rate([list(u.transcript)
                          for u in test_corpus.utterances],
                         [r.words for r in results])
    wall = sum(r.decode_wall_seconds for r in results)
    audio = sum(r.audio_seconds for r in results)
    return results, err, dec.rtf(wall, audio)


def _write_hyps(path, test_corpus, results):
    with open(path, "w") as f:
        for u, r in zip(test_corpus.utterances, results):
            words = " ".join(str(w) for w in r.words)
            f.write(f"{u.utt_id}\t{words}\t{r.log_score:.6f}\t"
                    f"{r.num_forward_passes}\t{r.decode_wall_seconds:.6f}\n")


def cmd_decode(args) -> int:
    model = load_model(args.model)
    priors = _load_priors(priors_path(args.model))
    graph = dec.load_graph(args.graph)
    test_corpus = corpus_mod.load_corpus(args.test_corpus)
    decode_cfg = dec.DecodeConfig(fs=args.fs, fr=args.fr,
                                  acoustic_scale=args.acoustic_scale,
                                  beam=args.beam)
    results, err, rtf_val = run_decode(test_corpus, model, priors, graph,
                                       decode_cfg)
    if args.hyp_out:
        _write_hyps(args.hyp_out, test_corpus, results)
    print(f"fs={args.fs} fr={args.fr} error_rate={err:.4f} "
          f"rtf={rtf_val:.4f}")
    return 0


def train_for_fs(train_corpus, cfg: dict, fs: int, seed_override=None):
    """Train one model (and priors) for a given stacking factor."""
    merged = dict(cfg)
    merged["fs"] = fs
    train_cfg = _train_config(merged, seed_override)
    dataset = prepare_dataset(train_corpus.utterances, fs)
    model_cfg = _model_config(cfg, fs * train_corpus.feature_dim,
                              train_corpus.num_states)
    init = ModelParams.init(model_cfg, train_cfg.seed)
    result = train_ce(init, dataset, train_cfg)
    priors = count_priors(train_corpus.all_labels(),
                          train_corpus.num_states, fs=fs)
    return result, priors


def run_sweep(train_corpus, test_corpus, pairs, cfg: dict,
              reps: int = 5, seed_override=None) -> list[report.SweepRow]:
    graph = build_graph_from_corpus(train_corpus)
    acoustic_scale = float(cfg.get("acoustic_scale", 1.0))
    models = {}
    for fs in sorted({fs for fs, _ in pairs}):
        models[fs] = train_for_fs(train_corpus, cfg, fs, seed_override)
    rows = []
    for fs, fr in pairs:
        result, priors = models[fs]
        decode_cfg = dec.DecodeConfig(fs=fs, fr=fr,
                                      acoustic_scale=acoustic_scale)
        results, err, _ = run_decode(test_corpus, result.params, priors,
                                     graph, decode_cfg)
        rtf_val = bench_rtf(test_corpus, result.params, priors, graph,
                            decode_cfg, reps)
        rows.append(report.SweepRow(
            fs=fs, fr=fr, error_rate=err, rtf=rtf_val,
            num_forward_passes_total=sum(r.num_forward_passes
                                         for r in results),
            train_wall_seconds=sum(result.epoch_seconds)))
    return rows


def bench_rtf(test_corpus, model, priors, graph, decode_cfg,
              reps: int = 5) -> float:
    """Median RTF over timing repetitions, decoded sequentially."""
    rtfs = []
    for _ in range(max(1, reps)):
        wall = audio = 0.0
        t0 = time.perf_counter()
        for u in test_corpus.utterances:
            r = dec.decode(u.features, model, priors, graph, decode_cfg,
                           FRAME_SECONDS)
            audio += r.audio_seconds
        wall = time.perf_counter() - t0
        rtfs.append(dec.rtf(wall, audio))
    return statistics.median(rtfs)


def cmd_sweep(args) -> int:
    cfg = _load_json(args.config)
    pairs = [tuple(p) for p in cfg.get("pairs", [])]
    if not pairs:
        raise UsageError("sweep config must list (fs, fr) pairs")
    if any(fs < 1 or fr < 1 for fs, fr in pairs):
        raise UsageError("fs and fr must be >= 1")
    train_corpus = corpus_mod.load_corpus(cfg["train_corpus"])
    test_corpus = corpus_mod.load_corpus(cfg["test_corpus"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(train_corpus, test_corpus, pairs,
                     cfg.get("train", {}), reps=int(cfg.get("reps", 5)),
                     seed_override=args.seed)
    report.write_csv(rows, out_dir / "sweep.csv")
    report.write_markdown(rows, out_dir / "sweep.md")
    figures = report.render_figures(rows, out_dir)
    print(Path(out_dir / "sweep.md").read_text())
    print("wrote " + ", ".join(str(p) for p in
                               [out_dir / "sweep.csv",
                                out_dir / "sweep.md", *figures]))
    return 0


def cmd_bench_rtf(args) -> int:
    model = load_model(args.model)
    priors = _load_priors(priors_path(args.model))
    graph = dec.load_graph(args.graph)
    test_corpus = corpus_mod.load_corpus(args.test_corpus)
    decode_cfg = dec.DecodeConfig(fs=args.fs, fr=args.fr,
                                  acoustic_scale=args.acoustic_scale,
                                  beam=args.beam)
    value = bench_rtf(test_corpus, model, priors, graph, decode_cfg,
                      args.reps)
    print(f"fs={args.fs} fr={args.fr} median_rtf={value:.4f} "
          f"({args.reps} reps)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framestack",
        description="Hybrid HMM/LSTM decoding with frame stacking and "
                    "frame retaining")
    parser.add_argument("--seed", type=int, default=None,
                        help="override every config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="CE-train an acoustic model")
    p.add_argument("--config", required=True)
    p.add_argument("--train-corpus", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-dist",
                       help="simulated BMUF + EMA distributed training")
    p.add_argument("--config", required=True)
    p.add_argument("--train-corpus", required=True)
    p.add_argument("--probe-corpus")
    p.add_argument("--model-out", required=True)
    p.add_argument("--ema-out")
    p.add_argument("--log-out")
    p.set_defaults(func=cmd_train_dist)

    p = sub.add_parser("build-graph", help="build the decoding graph")
    p.add_argument("--train-corpus", required=True)
    p.add_argument("--graph-out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("decode", help="decode a test corpus")
    p.add_argument("--test-corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--fs", type=int, default=1)
    p.add_argument("--fr", type=int, default=1)
    p.add_argument("--acoustic-scale", type=float, default=1.0)
    p.add_argument("--beam", type=float, default=float("inf"))
    p.add_argument("--hyp-out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep",
                       help="train/decode over a grid of (fs, fr) pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench-rtf", help="median RTF over repetitions")
    p.add_argument("--test-corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--fs", type=int, default=1)
    p.add_argument("--fr", type=int, default=1)
    p.add_argument("--acoustic-scale", type=float, default=1.0)
    p.add_argument("--beam", type=float, default=float("inf"))
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench_rtf)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
