"""Command-line surface: corpus generation, pre-training, fine-tuning,
evaluation, and attention diagnostics.

Option precedence is built-in defaults < config file < explicit flags, and
the effective configuration is echoed verbatim into the run log.  Exit
codes: 0 success, 1 usage, 2 data/schema, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import align, load_corpus_vocab, read_corpus, synth_corpus
from .downstream import (
    finetune_model_for,
    load_params_into,
    rank_moments,
    read_task_file,
    retrieval_finetune_step,
    retrieval_targets,
    seconds_to_frame_span,
)
from .encoder import ModelConfig
from .errors import ConfigError, DataError, NumericError, UsageError
from .metrics import accuracy, bleu4, recall_at_k, temporal_nms, write_metrics_report
from .pretrain import (
    PretrainHypers,
    PretrainModel,
    TASK_NAMES,
    dropout_rng,
    make_batches,
    pretrain_step,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

PRETRAIN_DEFAULTS: dict = {
    "steps": 500,
    "batch_size": 4,
    "tasks": "mlm,mnce,fom,vsm",
    "seed": 0,
    "lr": 3e-5,
    "weight_decay": 0.01,
    "d": 64,
    "cross_layers": 2,
    "cross_heads": 4,
    "temporal_layers": 1,
    "temporal_heads": 4,
    "ffn_multiplier": 4,
    "dropout": 0.1,
    "max_frames": 64,
    "max_tokens": 48,
    "margin": 0.1,
    "lambda_local": 0.01,
    "lambda_global": 8.0,
    "num_negatives": 15,
    "checkpoint_every": 0,
}

FINETUNE_DEFAULTS: dict = {
    "steps": 300,
    "batch_size": 2,
    "seed": 0,
    "lr": 1e-3,
    "weight_decay": 0.01,
    "qa_lambda": 0.5,
    "margin": 0.1,
    "lambda_local": 0.01,
    "lambda_global": 8.0,
}

EVAL_DEFAULTS: dict = {
    "tiou": 0.7,
    "nms": "0.5",
    "k": "1,10,100",
    "spans_per_clip": 5,
}


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_config_file(path: str) -> dict:
    """Flat `key = value` pairs; values parse as JSON scalars when possible."""
    out = {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"config line {path}:{lineno} is not `key = value`")
        key, _, value = line.partition("=")
        value = value.strip()
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


def _effective_options(defaults: dict, config_path: str | None, cli_values: dict) -> dict:
    eff = dict(defaults)
    if config_path:
        file_values = _read_config_file(config_path)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ConfigError(f"config file sets unknown keys: {sorted(unknown)}")
        eff.update(file_values)
    eff.update({k: v for k, v in cli_values.items() if v is not None})
    return eff


def _parse_tasks(task_list: str) -> dict[str, float]:
    weights = {}
    for name in task_list.split(","):
        name = name.strip()
        if not name:
            continue
        if name not in TASK_NAMES:
            raise ConfigError(f"unknown task {name!r}; expected a subset of {TASK_NAMES}")
        weights[name] = 1.0
    if not weights:
        raise ConfigError("at least one pre-training task must be enabled")
    return weights


def _load_aligned_corpus(corpus_path: str, max_frames: int, threads: int = 1):
    header, raws = read_corpus(corpus_path)
    vocab = load_corpus_vocab(corpus_path, header)
    for raw in raws:
        if len(raw.frames) > max_frames:
            raise DataError(
                f"clip {raw.clip_id!r} has {len(raw.frames)} frames, above the "
                f"max_frames={max_frames} ingestion limit"
            )
    if threads and threads > 1:
        # alignment is pure per clip; executor map preserves corpus order
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            clips = list(pool.map(lambda r: align(r, vocab), raws))
    else:
        clips = [align(raw, vocab) for raw in raws]
    return header, vocab, clips


def _model_config(eff: dict, vocab_size: int, feature_dim: int) -> ModelConfig:
    return ModelConfig(
        d=int(eff["d"]),
        cross_layers=int(eff["cross_layers"]),
        cross_heads=int(eff["cross_heads"]),
        temporal_layers=int(eff["temporal_layers"]),
        temporal_heads=int(eff["temporal_heads"]),
        vocab_size=vocab_size,
        frame_feature_dim=feature_dim,
        max_frames=int(eff["max_frames"]),
        max_tokens=int(eff["max_tokens"]),
        ffn_multiplier=int(eff["ffn_multiplier"]),
        dropout=float(eff["dropout"]),
    )


def _echo_config(log_fh, eff: dict) -> None:
    for key in sorted(eff):
        log_fh.write(f"# config {key} = {eff[key]}\n")
    log_fh.flush()


def _save_model_checkpoint(path, model, optimizer, meta: dict) -> None:
    arrays = {k: p.data for k, p in model.params().items()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    save_checkpoint(path, arrays, meta)


def _guard_finite(loss: float, step: int) -> None:
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss at step {step}")


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.fps is not None and args.fps <= 0:
        raise UsageError(f"--fps must be positive, got {args.fps}")
    path, vocab = synth_corpus(
        args.out,
        num_clips=args.clips,
        fps=args.fps if args.fps is not None else 2.0 / 3.0,
        clip_seconds=args.seconds,
        vocab_size=args.vocab_size,
        feature_dim=args.feature_dim,
        planted_structure=args.planted,
        seed=args.seed,
        num_topics=args.topics,
    )
    _, clips = read_corpus(path)
    n_frames = sorted({len(c.frames) for c in clips})
    print(
        f"wrote {len(clips)} clips to {path} "
        f"(frames per clip: {n_frames}, vocab size: {vocab.size})"
    )
    return EXIT_OK


def cmd_pretrain(args) -> int:
    eff = _effective_options(
        PRETRAIN_DEFAULTS,
        args.config,
        {k: getattr(args, k) for k in PRETRAIN_DEFAULTS},
    )
    weights = _parse_tasks(str(eff["tasks"]))
    header, vocab, clips = _load_aligned_corpus(
        args.corpus, int(eff["max_frames"]), threads=args.threads
    )
    config = _model_config(eff, vocab.size, header.feature_dim)
    hypers = PretrainHypers(
        margin=float(eff["margin"]),
        lambda_local=float(eff["lambda_local"]),
        lambda_global=float(eff["lambda_global"]),
        num_negatives=int(eff["num_negatives"]),
    )
    seed = int(eff["seed"])
    steps = int(eff["steps"])

    model = PretrainModel(config, seed=seed)
    optimizer = T.AdamW(
        model.params(), lr=float(eff["lr"]), weight_decay=float(eff["weight_decay"])
    )
    start_step = 0
    if args.resume:
        arrays, meta = load_checkpoint(args.resume)
        load_params_into(model.params(), arrays)
        start_step = int(meta["step"])
        optimizer.load_state_arrays(arrays, start_step)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "model_kind": "pretrain",
        "config": config.to_dict(),
        "seed": seed,
        "vocab_tokens": vocab.tokens,
        "tasks": sorted(weights),
    }
    log_path = out_dir / "train.log"
    with log_path.open("a") as log_fh:
        _echo_config(log_fh, eff)
        batches = make_batches(
            clips, vocab, config, int(eff["batch_size"]), seed, weights, steps,
            start_step=start_step,
        )
        for batch in batches:
            rng = dropout_rng(seed, batch.step) if config.dropout > 0 else None
            loss = pretrain_step(model, batch, optimizer, hypers, train_rng=rng)
            _guard_finite(loss, batch.step)
            log_fh.write(f"{batch.step}, {batch.kind}, {loss:.10f}, {eff['lr']}, {seed}\n")
            done = batch.step + 1
            if int(eff["checkpoint_every"]) and done % int(eff["checkpoint_every"]) == 0:
                _save_model_checkpoint(
                    out_dir / f"step{done:06d}.ckpt", model, optimizer, {**meta, "step": done}
                )
    _save_model_checkpoint(out_dir / "final.ckpt", model, optimizer, {**meta, "step": steps})
    print(f"pre-training finished at step {steps}; checkpoint: {out_dir / 'final.ckpt'}")
    return EXIT_OK


def _clips_by_id(clips) -> dict:
    return {c.clip_id: c for c in clips}


def _examples_by_clip(examples, by_id, task: str) -> dict:
    grouped: dict = {}
    for ex in examples:
        if ex.clip_id not in by_id:
            raise DataError(f"{task} example references unknown clip {ex.clip_id!r}")
        grouped.setdefault(ex.clip_id, []).append(ex)
    return grouped


def cmd_finetune(args) -> int:
    eff = _effective_options(
        FINETUNE_DEFAULTS,
        args.config,
        {k: getattr(args, k) for k in FINETUNE_DEFAULTS},
    )
    seed = int(eff["seed"])
    if args.init and args.from_scratch:
        raise UsageError("--init and --from-scratch are mutually exclusive")

    if args.init:
        arrays, meta = load_checkpoint(args.init)
        config = ModelConfig.from_dict(meta["config"])
    else:
        arrays, meta = None, None
        config = None

    max_frames = config.max_frames if config else PRETRAIN_DEFAULTS["max_frames"]
    header, vocab, clips = _load_aligned_corpus(args.corpus, max_frames, threads=args.threads)
    if config is None:
        base = dict(PRETRAIN_DEFAULTS)
        base["dropout"] = 0.1
        config = _model_config(base, vocab.size, header.feature_dim)
    examples = read_task_file(args.data, args.task)
    by_id = _clips_by_id(clips)
    grouped = _examples_by_clip(examples, by_id, args.task)

    model = finetune_model_for(args.task, config, seed)
    if arrays is not None:
        load_params_into(model.params(), arrays)
    optimizer = T.AdamW(
        model.params(), lr=float(eff["lr"]), weight_decay=float(eff["weight_decay"])
    )
    hypers = PretrainHypers(
        margin=float(eff["margin"]),
        lambda_local=float(eff["lambda_local"]),
        lambda_global=float(eff["lambda_global"]),
    )
    steps = int(eff["steps"])
    batch_size = int(eff["batch_size"])
    qa_lambda = float(eff["qa_lambda"])

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train.log"
    with log_path.open("a") as log_fh:
        _echo_config(log_fh, {**eff, "task": args.task, "init": args.init or "scratch"})
        for step in range(steps):
            rng = np.random.default_rng([seed, 21, step])
            train_rng = dropout_rng(seed, step) if config.dropout > 0 else None
            if args.task == "retrieval":
                ids = sorted(grouped)
                if len(ids) < 2:
                    raise DataError("retrieval finetuning needs examples on at least 2 clips")
                picked = rng.choice(len(ids), size=min(batch_size, len(ids)), replace=False)
                if len(picked) < 2:
                    picked = rng.choice(len(ids), size=2, replace=False)
                batch = [
                    (by_id[ids[i]], retrieval_targets(by_id[ids[i]], grouped[ids[i]], vocab))
                    for i in sorted(int(x) for x in picked)
                ]
                loss = retrieval_finetune_step(model, batch, optimizer, hypers, train_rng=train_rng)
            else:
                picked = rng.choice(len(examples), size=min(batch_size, len(examples)), replace=False)
                T.zero_grads(optimizer.params.values())
                terms = []
                for i in sorted(int(x) for x in picked):
                    ex = examples[i]
                    clip = by_id[ex.clip_id]
                    if args.task == "qa":
                        terms.append(model.loss(clip, ex, vocab, lam=qa_lambda, train_rng=train_rng))
                    else:
                        terms.append(model.loss(clip, ex, vocab, train_rng=train_rng))
                total = terms[0]
                for t in terms[1:]:
                    total = total + t
                total = total * (1.0 / len(terms))
                loss = total.item()
                T.backward(total)
                optimizer.step()
            _guard_finite(loss, step)
            log_fh.write(f"{step}, {args.task}, {loss:.10f}, {eff['lr']}, {seed}\n")

    ckpt = out_dir / "final.ckpt"
    _save_model_checkpoint(
        ckpt,
        model,
        optimizer,
        {
            "model_kind": args.task,
            "config": config.to_dict(),
            "seed": seed,
            "vocab_tokens": vocab.tokens,
            "step": steps,
            "qa_lambda": qa_lambda,
        },
    )
    print(f"finetuning ({args.task}) finished; checkpoint: {ckpt}")
    return EXIT_OK


def _restore_model(checkpoint_path: str):
    from .data import Vocab

    arrays, meta = load_checkpoint(checkpoint_path)
    config = ModelConfig.from_dict(meta["config"])
    kind = meta["model_kind"]
    model = finetune_model_for(
        kind if kind != "pretrain" else "retrieval", config, int(meta.get("seed", 0))
    )
    load_params_into(model.params(), arrays)
    vocab = Vocab.from_tokens(meta["vocab_tokens"])
    return model, config, vocab, meta


def cmd_eval(args) -> int:
    eff = _effective_options(EVAL_DEFAULTS, None, {
        "tiou": args.tiou, "nms": args.nms, "k": args.k, "spans_per_clip": args.spans_per_clip,
    })
    tiou_threshold = float(eff["tiou"])
    nms_setting = str(eff["nms"])
    nms_threshold = None if nms_setting == "off" else float(nms_setting)
    k_values = [int(x) for x in str(eff["k"]).split(",") if x.strip()]
    if any(k < 1 for k in k_values):
        raise UsageError("every K must be at least 1")

    model, config, vocab, meta = _restore_model(args.checkpoint)
    header, corpus_vocab, clips = _load_aligned_corpus(
        args.corpus, config.max_frames, threads=args.threads
    )
    if corpus_vocab.tokens != vocab.tokens:
        raise DataError("corpus vocabulary does not match the checkpoint vocabulary")
    by_id = _clips_by_id(clips)
    examples = read_task_file(args.data, args.task)
    settings = {
        "tiou_threshold": tiou_threshold,
        "nms": nms_threshold if nms_threshold is not None else "off",
        "k": k_values,
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
    }
    metrics: dict = {}

    if args.task == "retrieval":
        if not isinstance(model, PretrainModel):
            raise DataError("retrieval evaluation needs a pretrain/retrieval checkpoint")
        from .data import tokenize

        with T.no_grad():
            encoded = [model.encoder.encode_clip(c) for c in clips]
        predictions, ground_truth = [], []
        for ex in examples:
            if ex.clip_id not in by_id:
                raise DataError(f"retrieval example references unknown clip {ex.clip_id!r}")
            ranked = rank_moments(
                model, encoded, tokenize(ex.query, vocab), spans_per_clip=int(eff["spans_per_clip"])
            )
            if nms_threshold is not None:
                ranked = temporal_nms(ranked, nms_threshold)
            predictions.append(ranked)
            gt_clip = by_id[ex.clip_id]
            st, ed = seconds_to_frame_span(gt_clip, *ex.span)
            ground_truth.append((ex.clip_id, gt_clip.frame_seconds((st, ed))))
        for k in k_values:
            metrics[f"r@{k}"] = recall_at_k(
                predictions, ground_truth, k=k, tiou_threshold=tiou_threshold
            )
            metrics[f"video_r@{k}"] = recall_at_k(
                predictions, ground_truth, k=k, tiou_threshold=tiou_threshold, mode="video"
            )
    elif args.task in ("qa", "nli"):
        expected_kind = args.task
        if meta["model_kind"] != expected_kind:
            raise DataError(f"{args.task} evaluation needs a {expected_kind} checkpoint")
        preds, golds = [], []
        for ex in examples:
            if ex.clip_id not in by_id:
                raise DataError(f"{args.task} example references unknown clip {ex.clip_id!r}")
            preds.append(model.predict(by_id[ex.clip_id], ex, vocab))
            golds.append(ex.label)
        metrics["accuracy"] = accuracy(preds, golds)
    elif args.task == "caption":
        if meta["model_kind"] != "caption":
            raise DataError("caption evaluation needs a caption checkpoint")
        from .data import tokenize

        scores = []
        for ex in examples:
            if ex.clip_id not in by_id:
                raise DataError(f"caption example references unknown clip {ex.clip_id!r}")
            hyp = model.greedy_decode(by_id[ex.clip_id], ex.moment)
            ref = tokenize(ex.caption, vocab)
            scores.append(bleu4(hyp, ref))
        metrics["bleu4"] = sum(scores) / len(scores)
    else:
        raise UsageError(f"unknown eval task {args.task!r}")

    if args.out:
        write_metrics_report(args.out, args.task, metrics, settings)
    print(json.dumps({"task": args.task, "settings": settings, "metrics": metrics}, sort_keys=True))
    return EXIT_OK


def cmd_inspect_attention(args) -> int:
    model, config, vocab, meta = _restore_model(args.checkpoint)
    header, corpus_vocab, clips = _load_aligned_corpus(args.corpus, config.max_frames)
    by_id = _clips_by_id(clips)
    if args.clip_id not in by_id:
        raise DataError(f"clip {args.clip_id!r} not found in {args.corpus}")
    clip = by_id[args.clip_id]
    with T.no_grad():
        encoded = model.encoder.encode_clip(clip, capture_attention=True)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key, layers in encoded.attention.items():
        stage = key[0]
        tag = f"cross_sentence{key[1]}" if stage == "cross" else "temporal"
        for layer_idx, heads in enumerate(layers):
            for head_idx, grid in enumerate(heads):
                name = f"{tag}_layer{layer_idx}_head{head_idx}.txt"
                lines = [" ".join(f"{x:.8f}" for x in row) for row in grid]
                (out_dir / name).write_text("\n".join(lines) + "\n")
                written.append(name)
    print(f"wrote {len(written)} attention grids to {out_dir}")
    return EXIT_OK


# -- parser wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidtext", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus", parents=[])
    g.add_argument("--out", required=True)
    g.add_argument("--clips", type=int, default=8)
    g.add_argument("--seconds", type=float, default=60.0)
    g.add_argument("--fps", type=float, default=None, help="frames per second (default 2/3)")
    g.add_argument("--feature-dim", dest="feature_dim", type=int, default=32)
    g.add_argument("--vocab-size", dest="vocab_size", type=int, default=100)
    g.add_argument("--topics", type=int, default=8)
    g.add_argument("--planted", dest="planted", action="store_true", default=True)
    g.add_argument("--no-planted", dest="planted", action="store_false")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="run the pre-training loop")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--config", default=None, help="flat key = value option file")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--threads", type=int, default=1, help="data-pipeline alignment workers")
    for key, default in PRETRAIN_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if key == "tasks":
            p.add_argument(flag, type=str, default=None)
        elif isinstance(default, int):
            p.add_argument(flag, dest=key, type=int, default=None)
        else:
            p.add_argument(flag, dest=key, type=float, default=None)
    p.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="adapt a model to a downstream task")
    f.add_argument("--task", required=True, choices=("retrieval", "qa", "nli", "caption"))
    f.add_argument("--data", required=True)
    f.add_argument("--corpus", required=True)
    f.add_argument("--out-dir", dest="out_dir", required=True)
    f.add_argument("--init", default=None, help="pre-trained checkpoint to start from")
    f.add_argument("--from-scratch", dest="from_scratch", action="store_true")
    f.add_argument("--config", default=None)
    f.add_argument("--threads", type=int, default=1, help="data-pipeline alignment workers")
    for key, default in FINETUNE_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if key == "qa_lambda":
            flag = "--lambda"
        if isinstance(default, int):
            f.add_argument(flag, dest=key, type=int, default=None)
        else:
            f.add_argument(flag, dest=key, type=float, default=None)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="score a checkpoint on a task file")
    e.add_argument("--task", required=True, choices=("retrieval", "qa", "nli", "caption"))
    e.add_argument("--data", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", default=None, help="metrics report path (JSON)")
    e.add_argument("--tiou", type=float, default=None)
    e.add_argument("--nms", type=str, default=None, help="tIoU threshold or `off`")
    e.add_argument("--k", type=str, default=None, help="comma-separated recall cutoffs")
    e.add_argument("--spans-per-clip", dest="spans_per_clip", type=int, default=None)
    e.add_argument("--threads", type=int, default=1, help="data-pipeline alignment workers")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("inspect-attention", help="dump attention grids for one clip")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--corpus", required=True)
    a.add_argument("--clip-id", dest="clip_id", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_inspect_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
