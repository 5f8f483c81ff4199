"""Task adaptation: moment retrieval finetuning, multiple-choice QA,
video-language inference, captioning, and the single-channel wrapper.

Task files are newline-delimited JSON mirroring the corpus format: each
record names a ``clip_id`` plus task fields (``query``+``span`` for
retrieval; ``q``, ``answers``, ``label``, optional ``span`` for QA;
``hypothesis``+``label`` for inference; ``moment``+``caption`` for
captioning).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import CLS_ID, SEP_ID, AlignedClip, Sentence, Vocab, tokenize
from .encoder import (
    HierarchicalEncoder,
    LayerNorm,
    Linear,
    ModelConfig,
    MultiHeadAttention,
)
from .errors import ConfigError, DataError, UsageError
from .metrics import Moment
from .pretrain import PretrainHypers, PretrainModel, VsmTarget, span_nll

QA_LAMBDA_DEFAULT = 0.5
NLI_LABELS = {"contradict": 0, "entail": 1}


# -- task file records ---------------------------------------------------------


@dataclass
class RetrievalExample:
    clip_id: str
    query: str
    span: tuple[float, float]  # seconds


@dataclass
class QaExample:
    clip_id: str
    question: str
    answers: list[str]
    label: int
    span: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0 <= self.label < len(self.answers):
            raise DataError(f"qa label {self.label} outside [0, {len(self.answers)})")


@dataclass
class NliExample:
    clip_id: str
    hypothesis: str
    label: int  # 0 contradict, 1 entail


@dataclass
class CaptionExample:
    clip_id: str
    moment: tuple[float, float]  # seconds
    caption: str


_TASK_FIELDS = {
    "retrieval": ("query", "span"),
    "qa": ("q", "answers", "label"),
    "nli": ("hypothesis", "label"),
    "caption": ("moment", "caption"),
}


def read_task_file(path: str | Path, task: str):
    """Parse one task's examples, naming the offending record on mismatch."""
    if task not in _TASK_FIELDS:
        raise ConfigError(f"unknown task {task!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"task file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            clip_id = str(rec["clip_id"])
            if task == "retrieval":
                out.append(RetrievalExample(clip_id, str(rec["query"]), tuple(map(float, rec["span"]))))
            elif task == "qa":
                span = tuple(map(float, rec["span"])) if rec.get("span") is not None else None
                out.append(
                    QaExample(clip_id, str(rec["q"]), [str(a) for a in rec["answers"]],
                              int(rec["label"]), span)
                )
            elif task == "nli":
                label = rec["label"]
                if isinstance(label, str):
                    label = NLI_LABELS[label]
                out.append(NliExample(clip_id, str(rec["hypothesis"]), int(label)))
            else:
                out.append(
                    CaptionExample(clip_id, tuple(map(float, rec["moment"])), str(rec["caption"]))
                )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(
                f"{task} record at {path}:{lineno} does not match schema "
                f"{_TASK_FIELDS[task]}: {exc}"
            ) from exc
    if not out:
        raise DataError(f"task file {path} holds no records")
    return out


def write_task_file(path: str | Path, task: str, examples) -> None:
    rows = []
    for ex in examples:
        if task == "retrieval":
            rows.append({"clip_id": ex.clip_id, "query": ex.query, "span": list(ex.span)})
        elif task == "qa":
            row = {"clip_id": ex.clip_id, "q": ex.question, "answers": ex.answers, "label": ex.label}
            if ex.span is not None:
                row["span"] = list(ex.span)
            rows.append(row)
        elif task == "nli":
            rows.append({"clip_id": ex.clip_id, "hypothesis": ex.hypothesis, "label": ex.label})
        elif task == "caption":
            rows.append({"clip_id": ex.clip_id, "moment": list(ex.moment), "caption": ex.caption})
        else:
            raise ConfigError(f"unknown task {task!r}")
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in rows))


# -- shared plumbing -------------------------------------------------------------


def single_channel_wrap(
    frame_features: np.ndarray, frame_times: Sequence[tuple[float, float]], clip_id: str = "clip"
) -> AlignedClip:
    """Wrap a subtitle-less video: one empty-string subtitle ([CLS][SEP]
    only) paired with the whole frame sequence."""
    n = frame_features.shape[0]
    sent = Sentence(
        text="",
        token_ids=[CLS_ID, SEP_ID],
        t0=frame_times[0][0],
        t1=frame_times[-1][1],
        frame_indices=list(range(n)),
    )
    return AlignedClip(clip_id, [sent], np.asarray(frame_features, dtype=np.float64), list(frame_times))


def seconds_to_frame_span(clip: AlignedClip, t0: float, t1: float) -> tuple[int, int]:
    """Inclusive frame-index span of every frame overlapping [t0, t1]."""
    hits = [
        i for i, (f0, f1) in enumerate(clip.frame_times) if min(f1, t1) - max(f0, t0) > 0
    ]
    if not hits:
        raise DataError(f"moment [{t0}, {t1}] overlaps no frame of clip {clip.clip_id!r}")
    return (hits[0], hits[-1])


def qa_augmented_token_ids(
    sentence_ids: Sequence[int], query_ids: Sequence[int], answer_ids: Sequence[int] | None,
    max_tokens: int,
) -> list[int]:
    """Append [SEP] query [SEP] answer to a sentence's tokens."""
    out = list(sentence_ids) + [SEP_ID] + list(query_ids)
    if answer_ids is not None:
        out += [SEP_ID] + list(answer_ids)
    return out[:max_tokens]


def encode_with_appended_text(
    encoder: HierarchicalEncoder,
    clip: AlignedClip,
    extra_ids: Sequence[int],
    train_rng=None,
) -> T.Tensor:
    """Append query/hypothesis tokens to every sentence for early fusion and,
    as a frameless pseudo-sentence, to the temporal input; returns the
    text-aware frame rows (n_frames, d)."""
    max_tokens = encoder.config.max_tokens
    override = [
        qa_augmented_token_ids(s.token_ids, extra_ids, None, max_tokens)
        for s in clip.sentences
    ]
    v_emb, v_cross, _, _ = encoder.fuse_clip(
        clip, token_ids_override=override, train_rng=train_rng
    )
    w_emb = encoder.embed_text(list(extra_ids)[:max_tokens])
    _, w_cross = encoder.cross_modal_forward(None, w_emb, train_rng=train_rng)
    rows = T.concat_rows([v_emb + v_cross, w_emb + w_cross])
    h = encoder.temporal_apply(rows, train_rng=train_rng)
    return T.take_rows(h, np.arange(clip.n_frames))


def attention_pool(rows: T.Tensor, query: T.Tensor, d: int) -> T.Tensor:
    """Softmax-weighted sum of rows under a learned query vector: (1, d)."""
    scores = T.matmul(rows, query) * (1.0 / math.sqrt(d))
    alpha = T.softmax(scores, axis=0)
    return T.matmul(alpha.T, rows)


def load_params_into(params: dict[str, T.Tensor], arrays: dict[str, np.ndarray]) -> list[str]:
    """Copy intersecting arrays into parameters; returns loaded names."""
    loaded = []
    for name, p in params.items():
        if name in arrays:
            if tuple(arrays[name].shape) != p.shape:
                raise DataError(
                    f"checkpoint array {name!r} has shape {arrays[name].shape}, "
                    f"model expects {p.shape}"
                )
            p.data = np.array(arrays[name], dtype=np.float64)
            loaded.append(name)
    return loaded


# -- retrieval -------------------------------------------------------------------


def retrieval_targets(
    clip: AlignedClip, examples: Sequence[RetrievalExample], vocab: Vocab
) -> list[VsmTarget]:
    """Annotation queries for one clip, with spans snapped to frame indices."""
    out = []
    for ex in examples:
        ids = tokenize(ex.query, vocab)
        if not ids:
            raise DataError(f"query {ex.query!r} tokenizes to nothing")
        out.append(VsmTarget(-1, ids, seconds_to_frame_span(clip, *ex.span)))
    return out


def retrieval_finetune_step(
    model: PretrainModel,
    batch: Sequence[tuple[AlignedClip, Sequence[VsmTarget]]],
    optimizer: T.AdamW,
    hypers: PretrainHypers,
    train_rng: np.random.Generator | None = None,
) -> float:
    """Same loss contract as pre-training span matching, with annotation
    queries instead of sampled subtitles."""
    if len(batch) < 2:
        raise UsageError("retrieval finetuning needs a batch of at least 2 clips")
    T.zero_grads(optimizer.params.values())
    encoded = [model.encoder.encode_clip(clip, train_rng=train_rng) for clip, _ in batch]
    loss = model.vsm_loss(encoded, [targets for _, targets in batch], hypers, train_rng=train_rng)
    value = loss.item()
    T.backward(loss)
    optimizer.step()
    return value


def best_spans(p_st: np.ndarray, p_ed: np.ndarray, top_n: int = 5) -> list[tuple[int, int, float]]:
    """Highest-probability (start, end, p_st*p_ed) pairs with start <= end."""
    n = len(p_st)
    scored = [
        (st, ed, float(p_st[st] * p_ed[ed])) for st in range(n) for ed in range(st, n)
    ]
    scored.sort(key=lambda x: (-x[2], x[0], x[1]))
    return scored[:top_n]


def rank_moments(
    model: PretrainModel,
    encoded_clips: Sequence,
    query_token_ids: Sequence[int],
    spans_per_clip: int = 5,
) -> list[Moment]:
    """Score a query against every clip and rank candidate moments.

    A moment's score blends the clip-level cosine (shifted to [0, 1]) with
    the span probability, so both levels must agree for a high rank.
    """
    with T.no_grad():
        q = model.encode_query(query_token_ids)
        out = []
        for enc in encoded_clips:
            scores = model.vsm_scores_for_query(enc.v_temp, q)
            clip_score = (1.0 + scores.s_global.item()) / 2.0
            for st, ed, p in best_spans(scores.p_st.data, scores.p_ed.data, spans_per_clip):
                span_sec = enc.clip.frame_seconds((st, ed))
                out.append(Moment(enc.clip.clip_id, span_sec, clip_score * p))
        out.sort(key=lambda m: -m.score)
        return out


def rank_clips(
    model: PretrainModel, encoded_clips: Sequence, query_token_ids: Sequence[int]
) -> list[Moment]:
    """Clip-level ranking only (single-channel video retrieval)."""
    with T.no_grad():
        q = model.encode_query(query_token_ids)
        out = []
        for enc in encoded_clips:
            s = model.vsm_scores_for_query(enc.v_temp, q).s_global.item()
            span = (enc.clip.frame_times[0][0], enc.clip.frame_times[-1][1])
            out.append(Moment(enc.clip.clip_id, span, s))
        out.sort(key=lambda m: -m.score)
        return out


# -- video question answering -------------------------------------------------------


class QaModel:
    """Encoder plus answer scoring and span heads for multiple-choice QA."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng([seed, 2])
        self.encoder = HierarchicalEncoder(config, rng)
        d = config.d
        self.pool_query = T.Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True)
        self.ans_hidden = Linear(rng, d, d)
        self.ans_out = Linear(rng, d, 1, init="small")
        self.answer_attn_query = T.Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True)
        self.st_hidden = Linear(rng, d, d)
        self.st_out = Linear(rng, d, 1, init="small")
        self.ed_hidden = Linear(rng, d, d)
        self.ed_out = Linear(rng, d, 1, init="small")

    def params(self) -> dict[str, T.Tensor]:
        out = self.encoder.params("encoder")
        out["qa.pool_query"] = self.pool_query
        out.update(self.ans_hidden.params("qa.ans_hidden"))
        out.update(self.ans_out.params("qa.ans_out"))
        out["qa.answer_attn_query"] = self.answer_attn_query
        out.update(self.st_hidden.params("qa.st_hidden"))
        out.update(self.st_out.params("qa.st_out"))
        out.update(self.ed_hidden.params("qa.ed_hidden"))
        out.update(self.ed_out.params("qa.ed_out"))
        return out

    def forward(
        self,
        clip: AlignedClip,
        question_ids: Sequence[int],
        answer_ids: Sequence[Sequence[int]],
        train_rng=None,
    ):
        """Per-candidate encoding -> answer distribution and span scores.

        Returns (log_p_ans (n_answers,), p_ans, log_p_st, log_p_ed).
        """
        if len(answer_ids) < 2:
            raise UsageError(f"multiple choice needs at least 2 candidates, got {len(answer_ids)}")
        pooled_list, frame_rows_list, logits = [], [], []
        for ans in answer_ids:
            qa_ids = list(question_ids) + [SEP_ID] + list(ans)
            frame_rows = encode_with_appended_text(self.encoder, clip, qa_ids, train_rng=train_rng)
            pooled = attention_pool(frame_rows, self.pool_query, self.config.d)
            logits.append(self.ans_out(T.gelu(self.ans_hidden(pooled))))
            pooled_list.append(pooled)
            frame_rows_list.append(frame_rows)
        ans_logits = T.concat_cols(logits)  # (1, n_answers)
        log_p_ans = T.reshape(T.log_softmax(ans_logits, axis=-1), (-1,))
        p_ans = T.reshape(T.softmax(ans_logits, axis=-1), (-1,))

        # weighted sum across answers -> one span-scoring sequence
        pooled_stack = T.concat_rows(pooled_list)  # (n_answers, d)
        beta = T.softmax(
            T.matmul(pooled_stack, self.answer_attn_query) * (1.0 / math.sqrt(self.config.d)),
            axis=0,
        )
        fused = None
        for a, rows in enumerate(frame_rows_list):
            term = rows * T.take_rows(beta, [a])
            fused = term if fused is None else fused + term
        st_logits = T.reshape(self.st_out(T.gelu(self.st_hidden(fused))), (-1,))
        ed_logits = T.reshape(self.ed_out(T.gelu(self.ed_hidden(fused))), (-1,))
        return log_p_ans, p_ans, T.log_softmax(st_logits, axis=-1), T.log_softmax(ed_logits, axis=-1)

    def loss(
        self,
        clip: AlignedClip,
        example: QaExample,
        vocab: Vocab,
        lam: float = QA_LAMBDA_DEFAULT,
        train_rng=None,
    ) -> T.Tensor:
        """Answer cross-entropy plus lam * span loss when a span is given."""
        if lam < 0:
            raise ConfigError(f"qa span weight must be nonnegative, got {lam}")
        question_ids = tokenize(example.question, vocab)
        answer_ids = [tokenize(a, vocab) for a in example.answers]
        log_p_ans, _, log_p_st, log_p_ed = self.forward(
            clip, question_ids, answer_ids, train_rng=train_rng
        )
        span = seconds_to_frame_span(clip, *example.span) if example.span is not None else None
        return qa_loss_from_outputs(log_p_ans, log_p_st, log_p_ed, example.label, span, lam)

    def predict(self, clip: AlignedClip, example: QaExample, vocab: Vocab) -> int:
        with T.no_grad():
            _, p_ans, _, _ = self.forward(
                clip, tokenize(example.question, vocab),
                [tokenize(a, vocab) for a in example.answers],
            )
            return int(np.argmax(p_ans.data))


def qa_loss_from_outputs(
    log_p_ans: T.Tensor,
    log_p_st: T.Tensor,
    log_p_ed: T.Tensor,
    label: int,
    span: tuple[int, int] | None,
    lam: float = QA_LAMBDA_DEFAULT,
) -> T.Tensor:
    """-log p_ans[label] + lam * 0.5 * (-log p_st[y_st] - log p_ed[y_ed]).

    The span term enters only when span supervision exists.
    """
    if lam < 0:
        raise ConfigError(f"qa span weight must be nonnegative, got {lam}")
    loss = -T.take_rows(log_p_ans, [label]).sum()
    if lam > 0 and span is not None:
        loss = loss + lam * (0.5 * span_nll(log_p_st, log_p_ed, span))
    return loss


# -- video-language inference ----------------------------------------------------------


class NliModel:
    """Binary entail/contradict classifier over a hypothesis-aware pooled clip vector."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng([seed, 3])
        self.encoder = HierarchicalEncoder(config, rng)
        d = config.d
        self.pool_query = T.Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True)
        self.cls_hidden = Linear(rng, d, d)
        self.cls_out = Linear(rng, d, 2, init="small")

    def params(self) -> dict[str, T.Tensor]:
        out = self.encoder.params("encoder")
        out["nli.pool_query"] = self.pool_query
        out.update(self.cls_hidden.params("nli.cls_hidden"))
        out.update(self.cls_out.params("nli.cls_out"))
        return out

    def _logits(self, clip: AlignedClip, hypothesis_ids: Sequence[int], train_rng=None) -> T.Tensor:
        frame_rows = encode_with_appended_text(self.encoder, clip, hypothesis_ids, train_rng=train_rng)
        pooled = attention_pool(frame_rows, self.pool_query, self.config.d)
        return self.cls_out(T.gelu(self.cls_hidden(pooled)))  # (1, 2)

    def loss(self, clip: AlignedClip, example: NliExample, vocab: Vocab, train_rng=None) -> T.Tensor:
        logits = self._logits(clip, tokenize(example.hypothesis, vocab), train_rng=train_rng)
        return T.cross_entropy(logits, [example.label])

    def predict(self, clip: AlignedClip, example: NliExample, vocab: Vocab) -> int:
        with T.no_grad():
            return int(np.argmax(self._logits(clip, tokenize(example.hypothesis, vocab)).data))


# -- captioning -------------------------------------------------------------------------


class DecoderBlock:
    """Pre-LN decoder block: causal self-attention, cross-attention into the
    encoder rows, feed-forward."""

    def __init__(self, rng, d: int, heads: int, ffn_multiplier: int):
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(rng, d, heads)
        self.ln3 = LayerNorm(d)
        self.ffn1 = Linear(rng, d, d * ffn_multiplier)
        self.ffn2 = Linear(rng, d * ffn_multiplier, d)

    def __call__(self, x, enc_rows, causal_mask, enc_mask, capture=None):
        x = x + self.self_attn(self.ln1(x), key_mask=causal_mask)
        x = x + self.cross_attn(self.ln2(x), kv=enc_rows, key_mask=enc_mask, capture=capture)
        return x + self.ffn2(T.gelu(self.ffn1(self.ln3(x))))

    def params(self, prefix):
        out = {}
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.self_attn.params(f"{prefix}.self_attn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        out.update(self.cross_attn.params(f"{prefix}.cross_attn"))
        out.update(self.ln3.params(f"{prefix}.ln3"))
        out.update(self.ffn1.params(f"{prefix}.ffn1"))
        out.update(self.ffn2.params(f"{prefix}.ffn2"))
        return out


class CaptionModel:
    """Encoder plus a shallow (2-layer) left-to-right decoder whose
    cross-attention is restricted to the frames of the captioned moment."""

    def __init__(self, config: ModelConfig, seed: int = 0, decoder_layers: int = 2, max_len: int = 24):
        self.config = config
        self.seed = seed
        self.max_len = max_len
        rng = np.random.default_rng([seed, 4])
        self.encoder = HierarchicalEncoder(config, rng)
        d = config.d
        self.dec_token_emb = T.Tensor(
            rng.normal(0.0, 0.02, size=(config.vocab_size, d)), requires_grad=True
        )
        self.dec_pos_emb = T.Tensor(rng.normal(0.0, 0.02, size=(max_len + 1, d)), requires_grad=True)
        self.blocks = [
            DecoderBlock(rng, d, config.cross_heads, config.ffn_multiplier)
            for _ in range(decoder_layers)
        ]
        self.ln_out = LayerNorm(d)
        self.lm_out = Linear(rng, d, config.vocab_size, init="small")

    def params(self) -> dict[str, T.Tensor]:
        out = self.encoder.params("encoder")
        out["decoder.token_emb"] = self.dec_token_emb
        out["decoder.pos_emb"] = self.dec_pos_emb
        for i, b in enumerate(self.blocks):
            out.update(b.params(f"decoder.{i}"))
        out.update(self.ln_out.params("decoder.ln_out"))
        out.update(self.lm_out.params("decoder.lm_out"))
        return out

    def _moment_mask(self, clip: AlignedClip, moment: tuple[float, float]) -> np.ndarray:
        try:
            st, ed = seconds_to_frame_span(clip, *moment)
        except DataError as exc:
            raise UsageError(str(exc)) from exc
        mask = np.zeros(clip.n_frames, dtype=bool)
        mask[st : ed + 1] = True
        return mask

    def _decode_logits(
        self, input_ids: Sequence[int], enc_rows: T.Tensor, enc_mask: np.ndarray,
        train_rng=None, capture=None,
    ) -> T.Tensor:
        n = len(input_ids)
        x = T.embedding(self.dec_token_emb, list(input_ids)) + T.embedding(
            self.dec_pos_emb, np.arange(n)
        )
        causal = np.tril(np.ones((n, n), dtype=bool))
        for block in self.blocks:
            x = block(x, enc_rows, causal, enc_mask, capture=capture)
        return self.lm_out(self.ln_out(x))

    def loss(
        self, clip: AlignedClip, example: CaptionExample, vocab: Vocab, train_rng=None
    ) -> T.Tensor:
        """Teacher-forced left-to-right cross-entropy over the caption."""
        target = tokenize(example.caption, vocab)[: self.max_len - 1]
        if not target:
            raise DataError(f"caption {example.caption!r} tokenizes to nothing")
        enc = self.encoder.encode_clip(clip, train_rng=train_rng)
        enc_mask = self._moment_mask(clip, example.moment)
        input_ids = [CLS_ID] + target
        labels = target + [SEP_ID]
        logits = self._decode_logits(input_ids, enc.v_temp, enc_mask, train_rng=train_rng)
        return T.cross_entropy(logits, labels)

    def greedy_decode(
        self, clip: AlignedClip, moment: tuple[float, float], max_len: int | None = None,
        capture: list | None = None,
    ) -> list[int]:
        """Argmax decoding until the end token or the length limit; returns
        content token ids only."""
        max_len = self.max_len if max_len is None else min(max_len, self.max_len)
        enc_mask = self._moment_mask(clip, moment)
        with T.no_grad():
            enc = self.encoder.encode_clip(clip)
            ids = [CLS_ID]
            for _ in range(max_len):
                logits = self._decode_logits(ids, enc.v_temp, enc_mask, capture=capture)
                nxt = int(np.argmax(logits.data[-1]))
                if nxt == SEP_ID:
                    break
                ids.append(nxt)
            return ids[1:]


def finetune_model_for(task: str, config: ModelConfig, seed: int):
    if task == "retrieval":
        return PretrainModel(config, seed=seed)
    if task == "qa":
        return QaModel(config, seed=seed)
    if task == "nli":
        return NliModel(config, seed=seed)
    if task == "caption":
        return CaptionModel(config, seed=seed)
    raise ConfigError(f"unknown task {task!r}")
