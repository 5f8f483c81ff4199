"""The four pre-training objectives and their one-task-per-batch scheduler.

Masked token prediction reads local fused context (per-sentence rows),
masked frame objectives read global temporal context, span/clip matching
scores a query against the temporal rows, and order modeling classifies the
original timestamps of post-fusion shuffled frames.  Every mini-batch
carries exactly one task so tasks never corrupt each other's inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .data import MASK_ID, AlignedClip, Vocab, epoch_order, pad_frame_batch
from .encoder import HierarchicalEncoder, LayerNorm, Linear, ModelConfig
from .errors import ConfigError, UsageError

TASK_NAMES = ("mlm", "mffr", "mnce", "vsm", "fom")

MASK_FRACTION = 0.15
MASK_ACTION_SPLIT = (0.8, 0.1, 0.1)  # [MASK] / random token / keep
QUERY_FRACTION = 0.15
SPAN_FILTER_WIDTH = 5

ACTION_MASK = "mask"
ACTION_RANDOM = "random"
ACTION_KEEP = "keep"

# seed namespaces: every random decision is a pure function of
# (seed, namespace, step), so reruns and resumes regenerate it exactly
_SEED_TASK = 10
_SEED_PLAN = 11
_SEED_DROPOUT = 12
_SEED_NEGATIVES = 13


@dataclass
class PretrainHypers:
    margin: float = 0.1  # hinge margin between positive and negative scores
    lambda_local: float = 0.01
    lambda_global: float = 8.0
    num_negatives: int = 15

    def __post_init__(self):
        if self.margin < 0 or self.lambda_local < 0 or self.lambda_global < 0:
            raise ConfigError("hinge margin and loss weights must be nonnegative")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be at least 1")


# -- plans --------------------------------------------------------------------


@dataclass
class TokenMaskPlan:
    """Masked positions within one sentence, with their replacement action
    and the original ids kept for supervision."""

    positions: list[int]
    actions: list[str]
    originals: list[int]


@dataclass
class FrameMaskPlan:
    """Masked frame positions; inputs are always zeroed, originals stay in
    the clip for regression targets."""

    positions: list[int]


@dataclass
class ReorderPlan:
    """``positions[j]`` now holds the frame whose original timestamp is
    ``sources[j]``; everything else stays in place."""

    positions: list[int]
    sources: list[int]

    def permutation(self, n_frames: int) -> np.ndarray:
        perm = np.arange(n_frames)
        perm[self.positions] = self.sources
        return perm


@dataclass
class VsmTarget:
    query_sentence: int
    query_token_ids: list[int]
    span: tuple[int, int]


def _select_at_least_one(n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent per-index selection at the mask rate, redrawn until
    nonempty."""
    while True:
        sel = rng.random(n) < MASK_FRACTION
        if sel.any():
            return np.flatnonzero(sel)


def sample_task(batch_index: int, seed: int, weights: dict[str, float]) -> str:
    """Deterministic weighted draw of the single task for this mini-batch."""
    names = [t for t in TASK_NAMES if weights.get(t, 0.0) > 0]
    for t, w in weights.items():
        if t not in TASK_NAMES:
            raise ConfigError(f"unknown task {t!r}; expected one of {TASK_NAMES}")
        if w < 0:
            raise ConfigError(f"task weight for {t!r} must be nonnegative")
    if not names:
        raise ConfigError("at least one task weight must be positive")
    w = np.array([weights[t] for t in names])
    rng = np.random.default_rng([seed, _SEED_TASK, batch_index])
    return names[int(rng.choice(len(names), p=w / w.sum()))]


def apply_mlm_mask(
    token_ids: Sequence[int], rng: np.random.Generator, vocab: Vocab
) -> tuple[list[int], TokenMaskPlan]:
    """Select ~15% of the tokens and replace them 80/10/10 with [MASK], a
    random non-special token, or the original."""
    ids = list(token_ids)
    if not ids:
        raise UsageError("cannot mask an empty sentence")
    positions = _select_at_least_one(len(ids), rng)
    masked = ids.copy()
    actions, originals = [], []
    for pos in positions:
        originals.append(ids[pos])
        r = rng.random()
        if r < MASK_ACTION_SPLIT[0]:
            actions.append(ACTION_MASK)
            masked[pos] = MASK_ID
        elif r < MASK_ACTION_SPLIT[0] + MASK_ACTION_SPLIT[1]:
            actions.append(ACTION_RANDOM)
            masked[pos] = vocab.random_regular_id(rng)
        else:
            actions.append(ACTION_KEEP)
    return masked, TokenMaskPlan(list(map(int, positions)), actions, originals)


def make_frame_mask(n_frames: int, rng: np.random.Generator) -> FrameMaskPlan:
    if n_frames < 1:
        raise UsageError("cannot mask a clip with no frames")
    return FrameMaskPlan(list(map(int, _select_at_least_one(n_frames, rng))))


def make_reorder_plan(n_frames: int, rng: np.random.Generator) -> ReorderPlan:
    if n_frames < 1:
        raise UsageError("cannot reorder a clip with no frames")
    positions = _select_at_least_one(n_frames, rng)
    sources = rng.permutation(positions)
    return ReorderPlan(list(map(int, positions)), list(map(int, sources)))


def sample_vsm_targets(clip: AlignedClip, rng: np.random.Generator) -> list[VsmTarget]:
    """Sample ~15% of the clip's sentences (at least one) as span queries."""
    candidates = [j for j, s in enumerate(clip.sentences) if s.token_ids]
    if not candidates:
        raise UsageError(f"clip {clip.clip_id!r} has no tokenized sentence to query")
    n_q = max(1, round(QUERY_FRACTION * len(clip.sentences)))
    n_q = min(n_q, len(candidates))
    picks = rng.choice(len(candidates), size=n_q, replace=False)
    out = []
    for p in sorted(int(x) for x in picks):
        j = candidates[p]
        sent = clip.sentences[j]
        out.append(VsmTarget(j, list(sent.token_ids), sent.span()))
    return out


# -- model ---------------------------------------------------------------------


class QueryEncoder:
    """Pools fused query-token rows into one vector: attention pooling with a
    learned query, then two linear layers and a layer norm."""

    def __init__(self, rng: np.random.Generator, d: int):
        self.d = d
        self.pool = T.Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True)
        self.lin1 = Linear(rng, d, d)
        self.lin2 = Linear(rng, d, d)
        self.ln = LayerNorm(d)

    def __call__(self, w_cross: T.Tensor) -> T.Tensor:
        scores = T.matmul(w_cross, self.pool) * (1.0 / math.sqrt(self.d))
        alpha = T.softmax(scores, axis=0)
        pooled = T.matmul(alpha.T, w_cross)  # (1, d)
        return self.ln(self.lin2(T.gelu(self.lin1(pooled))))

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        out = {f"{prefix}.pool": self.pool}
        out.update(self.lin1.params(f"{prefix}.lin1"))
        out.update(self.lin2.params(f"{prefix}.lin2"))
        out.update(self.ln.params(f"{prefix}.ln"))
        return out


@dataclass
class VsmScores:
    s_local: T.Tensor  # (N_v,) dot-product frame scores
    s_global: T.Tensor  # scalar max cosine
    p_st: T.Tensor  # (N_v,)
    p_ed: T.Tensor
    log_p_st: T.Tensor
    log_p_ed: T.Tensor


class PretrainModel:
    """Encoder plus every pre-training head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng([seed, 1])
        self.encoder = HierarchicalEncoder(config, rng)
        self.lm_head = Linear(rng, config.d, config.vocab_size, init="small")
        self.mffr_head = Linear(rng, config.d, config.frame_feature_dim, init="small")
        self.mnce_proj = Linear(rng, config.d, config.d, init="small")
        self.fom_head = Linear(rng, config.d, config.max_frames, init="small")
        self.query_encoder = QueryEncoder(rng, config.d)
        self.span_st_filter = T.Tensor(
            rng.normal(0.0, 0.02, size=SPAN_FILTER_WIDTH), requires_grad=True
        )
        self.span_ed_filter = T.Tensor(
            rng.normal(0.0, 0.02, size=SPAN_FILTER_WIDTH), requires_grad=True
        )

    def params(self) -> dict[str, T.Tensor]:
        out = self.encoder.params("encoder")
        out.update(self.lm_head.params("lm_head"))
        out.update(self.mffr_head.params("mffr_head"))
        out.update(self.mnce_proj.params("mnce_proj"))
        out.update(self.fom_head.params("fom_head"))
        out.update(self.query_encoder.params("query_encoder"))
        out["span_st_filter"] = self.span_st_filter
        out["span_ed_filter"] = self.span_ed_filter
        return out

    # -- masked-input encoding -------------------------------------------------

    def encode_mlm(self, clip, masked_ids, train_rng=None):
        return self.encoder.encode_clip(clip, token_ids_override=masked_ids, train_rng=train_rng)

    def encode_mfm(self, clip, plan: FrameMaskPlan, train_rng=None):
        feats = clip.frame_features.copy()
        feats[plan.positions] = 0.0  # masked frame features are replaced by zeros
        return self.encoder.encode_clip(clip, frame_features_override=feats, train_rng=train_rng)

    def encode_reordered(self, clip, plan: ReorderPlan, train_rng=None):
        """Shuffle fused frame rows (and the positional residual with them),
        then re-run the temporal stack."""
        v_emb, v_cross, _, _ = self.encoder.fuse_clip(clip, train_rng=train_rng)
        perm = plan.permutation(clip.n_frames)
        v_emb_r = T.take_rows(v_emb, perm)
        v_cross_r = T.take_rows(v_cross, perm)
        return self.encoder.temporal_forward(v_emb_r, v_cross_r, train_rng=train_rng)

    # -- losses ------------------------------------------------------------------

    def mlm_loss(self, encoded, plans: Sequence[TokenMaskPlan | None]) -> T.Tensor:
        """Cross-entropy of the original ids at masked positions, read from
        the per-sentence fused token rows (local context)."""
        rows, labels = [], []
        for w_cross, plan in zip(encoded.w_cross, plans):
            if plan is None:
                continue
            rows.append(T.take_rows(w_cross, plan.positions))
            labels.extend(plan.originals)
        if not rows:
            raise UsageError("mlm_loss needs at least one masked position")
        logits = self.lm_head(T.concat_rows(rows))
        return T.cross_entropy(logits, labels)

    def mffr_loss(self, encoded, plan: FrameMaskPlan) -> T.Tensor:
        """Summed squared L2 between regressed and original features of the
        masked frames, read from the temporal rows (global context)."""
        if not plan.positions:
            raise UsageError("mffr_loss needs at least one masked frame")
        pred = self.mffr_head(T.take_rows(encoded.v_temp, plan.positions))
        target = encoded.clip.frame_features[plan.positions]
        return l2_regression_loss(pred, target)

    def mnce_positive_targets(self, clip, plan: FrameMaskPlan) -> np.ndarray:
        """Projections of the masked frames from a clean (unmasked) pass,
        detached so they act as fixed contrastive targets."""
        with T.no_grad():
            clean = self.encoder.encode_clip(clip)
            return self.mnce_proj(T.take_rows(clean.v_temp, plan.positions)).data

    def mnce_loss(
        self,
        encoded,
        plan: FrameMaskPlan,
        rng: np.random.Generator,
        num_negatives: int = 15,
        positive_targets: np.ndarray | None = None,
    ) -> T.Tensor:
        """Contrastive softmax: each masked frame's projection must score its
        own clean-pass projection above projections of sampled unmasked
        frames from the same clip."""
        if not plan.positions:
            raise UsageError("mnce_loss needs at least one masked frame")
        if positive_targets is None:
            positive_targets = self.mnce_positive_targets(encoded.clip, plan)
        n = encoded.clip.n_frames
        unmasked = np.setdiff1d(np.arange(n), np.asarray(plan.positions))
        if unmasked.size == 0:
            raise UsageError("mnce_loss needs at least one unmasked frame")
        replace = unmasked.size < num_negatives
        total = None
        for i, pos in enumerate(plan.positions):
            anchor = self.mnce_proj(T.take_rows(encoded.v_temp, [pos]))  # (1, d)
            neg_idx = rng.choice(unmasked, size=num_negatives, replace=replace)
            negs = self.mnce_proj(T.take_rows(encoded.v_temp, neg_idx))  # (K, d)
            pos_score = T.matmul(anchor, T.Tensor(positive_targets[i : i + 1]).T)  # (1, 1)
            neg_scores = T.matmul(anchor, negs.T)  # (1, K)
            logits = T.concat_cols([pos_score, neg_scores])
            nll = -T.slice_cols(T.log_softmax(logits, axis=-1), 0, 1).sum()
            total = nll if total is None else total + nll
        return total * (1.0 / len(plan.positions))

    def encode_query(self, query_token_ids: Sequence[int], train_rng=None) -> T.Tensor:
        """Fused-token query vector: cross-modal pass with no frames, then
        the query encoder."""
        w_emb = self.encoder.embed_text(query_token_ids)
        _, w_cross = self.encoder.cross_modal_forward(None, w_emb, train_rng=train_rng)
        return self.query_encoder(w_cross)

    def span_distributions(self, s_local: T.Tensor) -> tuple[T.Tensor, T.Tensor, T.Tensor, T.Tensor]:
        st_logits = T.conv1d(s_local, self.span_st_filter)
        ed_logits = T.conv1d(s_local, self.span_ed_filter)
        return (
            T.softmax(st_logits, axis=-1),
            T.softmax(ed_logits, axis=-1),
            T.log_softmax(st_logits, axis=-1),
            T.log_softmax(ed_logits, axis=-1),
        )

    def vsm_scores(self, encoded, query_token_ids: Sequence[int], train_rng=None) -> VsmScores:
        if encoded.clip.n_frames == 0:
            raise UsageError("vsm_scores needs at least one frame")
        q = self.encode_query(query_token_ids, train_rng=train_rng)
        return self.vsm_scores_for_query(encoded.v_temp, q)

    def vsm_scores_for_query(self, v_temp: T.Tensor, q: T.Tensor) -> VsmScores:
        s_local = T.reshape(T.matmul(v_temp, q.T), (-1,))
        p_st, p_ed, log_p_st, log_p_ed = self.span_distributions(s_local)
        s_global = global_alignment_score(v_temp, q)
        return VsmScores(s_local, s_global, p_st, p_ed, log_p_st, log_p_ed)

    def vsm_loss(
        self,
        encoded_clips: Sequence,
        targets_per_clip: Sequence[Sequence[VsmTarget]],
        hypers: PretrainHypers,
        train_rng=None,
    ) -> T.Tensor:
        """Span cross-entropy on positive pairs plus hinge losses against one
        in-batch negative query and one in-batch negative clip."""
        n_clips = len(encoded_clips)
        if n_clips < 2:
            raise UsageError("vsm_loss needs a batch of at least 2 clips for negatives")

        queries = [
            [self.encode_query(t.query_token_ids, train_rng=train_rng) for t in targets]
            for targets in targets_per_clip
        ]
        local_terms, global_terms = [], []
        for b, targets in enumerate(targets_per_clip):
            other = (b + 1) % n_clips
            v_own = encoded_clips[b].v_temp
            v_other = encoded_clips[other].v_temp
            for m, target in enumerate(targets):
                q = queries[b][m]
                scores = self.vsm_scores_for_query(v_own, q)
                local_terms.append(span_nll(scores.log_p_st, scores.log_p_ed, target.span))
                neg_queries = queries[other]
                q_hat = neg_queries[m % len(neg_queries)]
                s_pos = scores.s_global
                s_neg_query = global_alignment_score(v_own, q_hat)
                s_neg_clip = global_alignment_score(v_other, q)
                global_terms.append(
                    hinge_loss(s_pos, s_neg_query, hypers.margin)
                    + hinge_loss(s_pos, s_neg_clip, hypers.margin)
                )
        l_local = _mean_terms(local_terms)
        l_global = _mean_terms(global_terms)
        return hypers.lambda_local * l_local + hypers.lambda_global * l_global

    def fom_loss(self, v_temp_reordered: T.Tensor, plan: ReorderPlan) -> T.Tensor:
        """Negative log-likelihood of each reordered row's original
        timestamp, summed over the reordered positions only."""
        if sorted(plan.positions) != sorted(set(plan.positions)) or sorted(
            plan.sources
        ) != sorted(plan.positions):
            raise UsageError("reorder plan is not a permutation of its positions")
        n = v_temp_reordered.shape[0]
        rows = T.take_rows(v_temp_reordered, plan.positions)
        logits = T.slice_cols(self.fom_head(rows), 0, n)
        return timestamp_nll(logits, plan.sources)


# -- loss helpers ----------------------------------------------------------------


def l2_regression_loss(pred: T.Tensor, target: np.ndarray) -> T.Tensor:
    diff = pred - T.Tensor(target)
    return (diff * diff).sum()


def hinge_loss(s_pos: T.Tensor, s_neg: T.Tensor, margin: float) -> T.Tensor:
    """max(0, margin + s_neg - s_pos); zero whenever the positive clears the
    negative by the margin."""
    return T.relu(margin + s_neg - s_pos)


def global_alignment_score(v_temp: T.Tensor, q: T.Tensor) -> T.Tensor:
    """Max over frames of cosine(frame row, query)."""
    dots = T.reshape(T.matmul(v_temp, q.T), (-1,))
    row_norms = T.sqrt((v_temp * v_temp).sum(axis=1) + 1e-24)
    q_norm = T.sqrt((q * q).sum() + 1e-24)
    cos = dots * T.reciprocal(row_norms * q_norm)
    return T.vmax(cos)


def span_nll(log_p_st: T.Tensor, log_p_ed: T.Tensor, span: tuple[int, int]) -> T.Tensor:
    """-(log p_st[y_st] + log p_ed[y_ed]) for one ground-truth span."""
    y_st, y_ed = span
    return -(T.take_rows(log_p_st, [y_st]).sum() + T.take_rows(log_p_ed, [y_ed]).sum())


def timestamp_nll(logits: T.Tensor, labels: Sequence[int]) -> T.Tensor:
    """-sum_j log softmax(logits[j])[labels[j]] (sum, not mean)."""
    n_rows, n_classes = logits.shape
    lsm = T.log_softmax(logits, axis=-1)
    flat_idx = [j * n_classes + int(t) for j, t in enumerate(labels)]
    return -T.take_rows(T.reshape(lsm, (-1,)), flat_idx).sum()


def _mean_terms(terms: list[T.Tensor]) -> T.Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# -- batching and the training step ------------------------------------------------


@dataclass
class TaskBatch:
    """One mini-batch specialized to exactly one task."""

    kind: str
    step: int
    epoch: int
    seed: int
    clips: list[AlignedClip]
    masked_token_ids: list[list[list[int]]] | None = None
    token_plans: list[list[TokenMaskPlan | None]] | None = None
    frame_plans: list[FrameMaskPlan] | None = None
    reorder_plans: list[ReorderPlan] | None = None
    vsm_targets: list[list[VsmTarget]] | None = None

    def padded_frames(self) -> tuple[np.ndarray, np.ndarray]:
        return pad_frame_batch(self.clips)


def make_batches(
    clips: Sequence[AlignedClip],
    vocab: Vocab,
    config: ModelConfig,
    batch_size: int,
    seed: int,
    weights: dict[str, float],
    num_steps: int,
    start_step: int = 0,
) -> Iterator[TaskBatch]:
    """Yield deterministic task batches for steps [start_step, num_steps).

    Every clip appears exactly once per epoch; the epoch order, the task
    draw, and all mask/shuffle/query plans are pure functions of
    (seed, step), so resuming at any step regenerates the same stream.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if weights.get("vsm", 0.0) > 0 and batch_size < 2:
        raise ConfigError("the span-matching task needs batch_size >= 2 for in-batch negatives")
    n = len(clips)
    if n == 0:
        raise ConfigError("empty corpus")
    only_vsm = weights.get("vsm", 0.0) > 0 and all(
        w <= 0 for t, w in weights.items() if t != "vsm"
    )
    if only_vsm and n % batch_size == 1:
        raise ConfigError(
            "a span-matching-only schedule leaves a trailing single-clip batch "
            "with no in-batch negatives; adjust batch_size or the corpus size"
        )
    batches_per_epoch = (n + batch_size - 1) // batch_size

    for step in range(start_step, num_steps):
        epoch = step // batches_per_epoch
        slot = step % batches_per_epoch
        order = epoch_order(n, seed, epoch)
        batch_clips = [clips[i] for i in order[slot * batch_size : (slot + 1) * batch_size]]

        effective = dict(weights)
        if len(batch_clips) < 2:
            effective.pop("vsm", None)  # a trailing singleton batch has no negatives
        kind = sample_task(step, seed, effective)
        rng = np.random.default_rng([seed, _SEED_PLAN, step])
        yield build_task_batch(kind, batch_clips, vocab, config, rng, step=step, epoch=epoch, seed=seed)


def build_task_batch(
    kind: str,
    batch_clips: Sequence[AlignedClip],
    vocab: Vocab,
    config: ModelConfig,
    rng: np.random.Generator,
    step: int = 0,
    epoch: int = 0,
    seed: int = 0,
) -> TaskBatch:
    batch = TaskBatch(kind=kind, step=step, epoch=epoch, seed=seed, clips=list(batch_clips))
    if kind == "mlm":
        batch.masked_token_ids, batch.token_plans = [], []
        for clip in batch_clips:
            ids_per_sentence, plans = [], []
            for sent in clip.sentences:
                ids = sent.token_ids[: config.max_tokens]
                if ids:
                    masked, plan = apply_mlm_mask(ids, rng, vocab)
                else:
                    masked, plan = ids, None
                ids_per_sentence.append(masked)
                plans.append(plan)
            batch.masked_token_ids.append(ids_per_sentence)
            batch.token_plans.append(plans)
    elif kind in ("mffr", "mnce"):
        batch.frame_plans = [make_frame_mask(c.n_frames, rng) for c in batch_clips]
    elif kind == "fom":
        batch.reorder_plans = [make_reorder_plan(c.n_frames, rng) for c in batch_clips]
    elif kind == "vsm":
        batch.vsm_targets = [sample_vsm_targets(c, rng) for c in batch_clips]
    else:
        raise ConfigError(f"unknown task {kind!r}")
    return batch


def task_loss(
    model: PretrainModel,
    batch: TaskBatch,
    hypers: PretrainHypers,
    train_rng: np.random.Generator | None = None,
) -> T.Tensor:
    """Forward pass and loss for the batch's single task (mean over clips)."""
    if batch.kind == "mlm":
        terms = [
            model.mlm_loss(
                model.encode_mlm(clip, masked, train_rng=train_rng), plans
            )
            for clip, masked, plans in zip(batch.clips, batch.masked_token_ids, batch.token_plans)
        ]
    elif batch.kind == "mffr":
        terms = [
            model.mffr_loss(model.encode_mfm(clip, plan, train_rng=train_rng), plan)
            for clip, plan in zip(batch.clips, batch.frame_plans)
        ]
    elif batch.kind == "mnce":
        neg_rng = np.random.default_rng([batch.seed, _SEED_NEGATIVES, batch.step])
        terms = [
            model.mnce_loss(
                model.encode_mfm(clip, plan, train_rng=train_rng),
                plan,
                neg_rng,
                num_negatives=hypers.num_negatives,
            )
            for clip, plan in zip(batch.clips, batch.frame_plans)
        ]
    elif batch.kind == "fom":
        terms = [
            model.fom_loss(model.encode_reordered(clip, plan, train_rng=train_rng), plan)
            for clip, plan in zip(batch.clips, batch.reorder_plans)
        ]
    elif batch.kind == "vsm":
        encoded = [model.encoder.encode_clip(c, train_rng=train_rng) for c in batch.clips]
        return model.vsm_loss(encoded, batch.vsm_targets, hypers, train_rng=train_rng)
    else:
        raise ConfigError(f"unknown task {batch.kind!r}")
    return _mean_terms(terms)


def dropout_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SEED_DROPOUT, step])


def pretrain_step(
    model: PretrainModel,
    batch: TaskBatch,
    optimizer: T.AdamW,
    hypers: PretrainHypers,
    train_rng: np.random.Generator | None = None,
) -> float:
    """One optimization step: forward, task loss, backward, parameter update."""
    T.zero_grads(optimizer.params.values())
    loss = task_loss(model, batch, hypers, train_rng=train_rng)
    value = loss.item()
    T.backward(loss)
    optimizer.step()
    return value
