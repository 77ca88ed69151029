"""Training pipeline: base-model training on span cross-entropy, frozen
candidate-set collection with the gold-slot guarantee, and combined-objective
finetuning (rank-weighted hard loss over the frozen set plus answer-aware
contrastive loss with per-step hard-negative mining), driven by AdamW with
linear warm-up.

Everything is deterministic given (config, seed, data): shuffling comes from
one seeded generator, random mining from per-(example, step) derived streams,
and every reduction runs in a fixed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EncodedExample, Example, Span, Vocab, encode, span_text
from .encoder import (
    EncoderConfig,
    ForwardTrace,
    ModelParams,
    PARAM_FIELDS,
    UpstreamGrads,
    backward,
    forward,
    init_params,
    question_repr,
    save_checkpoint,
    span_repr,
    zero_params,
)
from .losses import (
    LossConfig,
    ce_loss_grads,
    combined_loss,
    contrastive_loss_grads,
    hard_loss,
    hard_loss_grads,
)
from .mining import mining_rng, select_hard_negatives
from .metrics import EvalReport, evaluate
from .spandecode import (
    ScoredSpan,
    build_frozen_set,
    store_record,
    topk_spans,
    write_candidate_store,
)

# Bias-like parameters are exempt from decoupled weight decay.
NO_DECAY_FIELDS = ("head_b", "u")


@dataclass
class TrainConfig:
    encoder: EncoderConfig
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 3
    batch_size: int = 32
    checkpoint_every: int = 1000
    eval_every: int = 0
    seed: int = 0
    warmup: float = 0.1
    max_answer_len: int = 8
    question_max_len: int = 64
    objective: str = "combined"  # finetune objective: "combined" or "ce"
    phase: str = "base"  # base | collect | finetune (informational)
    z_match: str = "position"  # gold membership test when freezing: position | text
    z_refresh_every: int = 0  # steps between frozen-set refreshes; 0 = frozen
    remine_every: int = 1  # steps a mined selection is reused before re-mining
    probe_count: int = 3
    probe_top_n: int = 4
    log_mined: bool = True

    def __post_init__(self):
        if self.objective not in ("combined", "ce"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.z_match not in ("position", "text"):
            raise ValueError(f"unknown z_match {self.z_match!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.warmup <= 1.0:
            raise ValueError("warmup must lie in [0, 1]")
        if self.remine_every < 1:
            raise ValueError("remine_every must be >= 1")


class RunLog:
    """Append-only record stream, written as JSON Lines."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, **record) -> None:
        self.records.append(record)

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r.get("kind") == kind]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    log.records.append(json.loads(line))
        return log


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0


def init_adam_state(config: EncoderConfig) -> AdamState:
    return AdamState(m=zero_params(config), v=zero_params(config), t=0)


def adamw_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Decay multiplies the parameter by (1 - lr * wd) before the adaptive term
    is subtracted; bias-like fields (head_b, u) are never decayed.
    """
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in {name}")
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p = getattr(params, name)
        if weight_decay != 0.0 and name not in NO_DECAY_FIELDS:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _accumulate(total: ModelParams, delta: ModelParams, scale: float = 1.0) -> None:
    for name in PARAM_FIELDS:
        getattr(total, name).__iadd__(scale * getattr(delta, name))


def _lr_at(base_lr: float, step: int, warmup_steps: int) -> float:
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    return base_lr


def _encode_usable(
    config: TrainConfig, examples: Sequence[Example], vocab: Vocab
) -> tuple[list[EncodedExample], int]:
    encs = []
    skipped = 0
    for ex in examples:
        enc = encode(ex, vocab, config.encoder.max_len, config.question_max_len)
        if enc.usable:
            encs.append(enc)
        else:
            skipped += 1
    if not encs:
        raise ValueError("no usable examples after encoding")
    return encs, skipped


def _batches(rng: np.random.Generator, n: int, batch_size: int) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def total_steps(n_examples: int, batch_size: int, epochs: int) -> int:
    return epochs * math.ceil(n_examples / batch_size)


def log_probe_predictions(
    params: ModelParams,
    config: TrainConfig,
    probe_encs: Sequence[EncodedExample],
    n: int,
    step: int,
) -> list[dict]:
    """Top-n spans with probabilities for each probe example at a checkpoint."""
    records = []
    for enc in probe_encs:
        trace = forward(params, enc)
        preds = topk_spans(trace, enc, n, config.max_answer_len)
        records.append(
            {
                "kind": "probe",
                "step": step,
                "id": enc.id,
                "preds": [
                    {
                        "start": s.span.start,
                        "end": s.span.end,
                        "text": s.span.text,
                        "prob": float(np.exp(s.log_prob)),
                    }
                    for s in preds.ranked
                ],
            }
        )
    return records


def train_base(
    config: TrainConfig,
    train_examples: Sequence[Example],
    vocab: Vocab,
    dev_examples: Sequence[Example] = (),
    out_dir: str | Path | None = None,
    init: ModelParams | None = None,
) -> tuple[ModelParams, RunLog]:
    """Minibatch AdamW over the gold-span cross-entropy.

    Pass ``init`` to resume from existing parameters (optimizer state starts
    fresh); otherwise parameters are drawn from the seeded initializer.
    """
    log = RunLog()
    encs, skipped = _encode_usable(config, train_examples, vocab)
    log.add(kind="setup", phase="base", examples=len(encs), skipped_unusable=skipped)
    params = init.copy() if init is not None else init_params(config.encoder, config.seed)
    state = init_adam_state(config.encoder)
    rng = np.random.default_rng(config.seed)
    steps = total_steps(len(encs), config.batch_size, config.epochs)
    warmup_steps = math.ceil(config.warmup * steps)
    probe = encs[: config.probe_count]

    step = 0
    for _ in range(config.epochs):
        for batch_idx in _batches(rng, len(encs), config.batch_size):
            grads = zero_params(config.encoder)
            batch_loss = 0.0
            inv_b = 1.0 / len(batch_idx)
            for i in batch_idx:
                enc = encs[int(i)]
                trace = forward(params, enc)
                loss, d_slp, d_elp = ce_loss_grads(trace, enc.gold_in_sequence)
                if not np.isfinite(loss):
                    raise RuntimeError(f"non-finite loss at step {step}, example {enc.id}")
                batch_loss += loss * inv_b
                g = backward(params, trace, UpstreamGrads(d_slp * inv_b, d_elp * inv_b))
                _accumulate(grads, g)
            adamw_step(params, grads, state, _lr_at(config.lr, step, warmup_steps), config.betas, config.eps, config.weight_decay)
            step += 1
            log.add(kind="step", phase="base", step=step, loss=batch_loss)
            _maybe_checkpoint(config, params, probe, step, steps, out_dir, log, "base")
            _maybe_eval(config, params, dev_examples, vocab, step, log)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "base.ckpt", config.encoder, params)
        log.save(out / "runlog_base.jsonl")
    return params, log


def _maybe_checkpoint(config, params, probe, step, steps, out_dir, log, tag):
    at_cadence = config.checkpoint_every > 0 and step % config.checkpoint_every == 0
    if not (at_cadence or step == steps):
        return
    for rec in log_probe_predictions(params, config, probe, config.probe_top_n, step):
        log.add(**rec)
    if out_dir is not None and at_cadence:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / f"{tag}_step{step:06d}.ckpt", config.encoder, params)


def _maybe_eval(config, params, dev_examples, vocab, step, log):
    if config.eval_every > 0 and dev_examples and step % config.eval_every == 0:
        report = evaluate(
            params, config.encoder, dev_examples, vocab,
            k_list=(1,), max_answer_len=config.max_answer_len,
            question_max_len=config.question_max_len,
        )
        log.add(kind="eval", step=step, em=report.em, f1=report.f1)


def gold_scored(trace: ForwardTrace, gold: Span) -> ScoredSpan:
    return ScoredSpan(
        span=gold,
        score=float(trace.start_logits[gold.start] + trace.end_logits[gold.end]),
        log_prob=float(trace.start_logprobs[gold.start] + trace.end_logprobs[gold.end]),
    )


def collect_candidates(
    params: ModelParams,
    config: TrainConfig,
    examples: Sequence[Example],
    vocab: Vocab,
    out_path: str | Path | None = None,
) -> tuple[list[dict], dict]:
    """Decode the frozen candidate set for every example and summarize recall.

    Each record keeps the example's top-k spans with the gold guaranteed a
    slot, plus the gold's original rank (None when it had to be inserted).
    """
    k = config.loss.k_frozen
    records = []
    rank_hist: dict[str, int] = {}
    skipped = 0
    for ex in examples:
        enc = encode(ex, vocab, config.encoder.max_len, config.question_max_len)
        if not enc.usable:
            skipped += 1
            continue
        trace = forward(params, enc)
        preds = topk_spans(trace, enc, k, config.max_answer_len)
        frozen, gold_rank = build_frozen_set(preds, gold_scored(trace, enc.gold_in_sequence), k, config.z_match)
        records.append(store_record(ex.id, frozen, gold_rank))
        rank_hist[str(gold_rank)] = rank_hist.get(str(gold_rank), 0) + 1
    n = len(records)
    if n == 0:
        raise ValueError("no usable examples to collect candidates for")
    ranked = [r["gold_rank"] for r in records if r["gold_rank"] is not None]
    summary = {
        "count": n,
        "skipped_unusable": skipped,
        "k": k,
        "gold_rank_hist": dict(sorted(rank_hist.items(), key=lambda kv: (kv[0] == "None", kv[0].zfill(4)))),
        "recall_at": {str(kk): sum(1 for r in ranked if r <= kk) / n for kk in (1, 3, 5, 10, k)},
    }
    if out_path is not None:
        write_candidate_store(out_path, records)
        with open(Path(out_path).with_suffix(".summary.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary, fh, sort_keys=True)
            fh.write("\n")
    return records, summary


@dataclass
class BatchItem:
    """One example's frozen inputs for a single optimization step."""

    enc: EncodedExample
    gold: Span
    frozen_spans: list[Span]
    neg_spans: list[Span]  # empty = skip the contrastive term for this item


@dataclass
class BatchResult:
    combined: float
    hard: float
    contrast: float
    grads: ModelParams
    contrastive_items: int


def combined_batch(params: ModelParams, items: Sequence[BatchItem], config: TrainConfig) -> BatchResult:
    """Loss and exact gradients of the combined objective on one batch.

    Pure in (params, items, config): candidate sets and mined negatives are
    already frozen inside the items, so the value is differentiable in the
    parameters and finite-difference checkable. The hard side averages over
    the whole batch; the contrastive side averages over items that brought a
    negative. At alpha extremes the excluded side contributes no gradient at
    all (not even exact zeros added in).
    """
    loss_cfg = config.loss
    alpha = loss_cfg.alpha
    B = len(items)
    if B == 0:
        raise ValueError("empty batch")
    traces = [forward(params, it.enc) for it in items]

    hard_vals = []
    hard_ups: list[tuple[np.ndarray, np.ndarray]] = []
    d_u_total = np.zeros_like(params.u)
    if alpha < 1.0:
        for it, tr in zip(items, traces):
            hl, d_slp, d_elp, d_u = hard_loss_grads(tr, it.frozen_spans, params.u)
            hard_vals.append(hl)
            hard_ups.append((d_slp, d_elp))
            d_u_total += d_u
    else:
        for it, tr in zip(items, traces):
            hard_vals.append(hard_loss(tr, it.frozen_spans, params.u))
    hard_mean = float(sum(hard_vals) / B)

    contrast_val = 0.0
    token_grads: dict[int, np.ndarray] = {}
    n_contrastive = 0
    if alpha > 0.0:
        live = [i for i, it in enumerate(items) if it.neg_spans]
        n_contrastive = len(live)
        if live:
            reprs = []
            for i in live:
                tr = traces[i]
                reprs.append(
                    (
                        question_repr(tr),
                        span_repr(tr, items[i].gold),
                        [span_repr(tr, s) for s in items[i].neg_spans],
                    )
                )
            contrast_val, item_grads = contrastive_loss_grads(reprs, loss_cfg.tau)
            for i, ig in zip(live, item_grads):
                it = items[i]
                n = traces[i].length
                d = params.token_emb.shape[1]
                acc = np.zeros((n, d))
                q0, q1 = it.enc.question_region
                _spread(acc, q0, q1, ig.d_question)
                _spread(acc, it.gold.start, it.gold.end, ig.d_gold)
                for span, dh in zip(it.neg_spans, ig.d_hards):
                    _spread(acc, span.start, span.end, dh)
                token_grads[i] = alpha * acc

    total = zero_params(config.encoder)
    hard_scale = (1.0 - alpha) / B
    for i, (it, tr) in enumerate(zip(items, traces)):
        up = UpstreamGrads()
        if alpha < 1.0:
            d_slp, d_elp = hard_ups[i]
            up.d_start_logprob = d_slp * hard_scale
            up.d_end_logprob = d_elp * hard_scale
        if i in token_grads:
            up.d_token_reprs = token_grads[i]
        if up.d_start_logprob is None and up.d_token_reprs is None:
            continue
        _accumulate(total, backward(params, tr, up))
    if alpha < 1.0:
        total.u += hard_scale * d_u_total

    return BatchResult(
        combined=combined_loss(contrast_val, hard_mean, alpha),
        hard=hard_mean,
        contrast=contrast_val,
        grads=total,
        contrastive_items=n_contrastive,
    )


def _spread(acc: np.ndarray, first: int, last: int, grad: np.ndarray) -> None:
    # mean-pool backward: each pooled row receives grad / span length
    count = last - first + 1
    acc[first : last + 1] += grad / count


def _frozen_spans_from_record(rec: dict, enc: EncodedExample, k: int) -> list[Span]:
    spans = rec["spans"]
    if len(spans) != k:
        raise ValueError(f"{enc.id}: store has {len(spans)} candidate spans, config expects {k}")
    return [Span(int(s["start"]), int(s["end"]), span_text(enc, int(s["start"]), int(s["end"]))) for s in spans]


def finetune(
    config: TrainConfig,
    train_examples: Sequence[Example],
    vocab: Vocab,
    store: dict[str, dict],
    init: ModelParams,
    dev_examples: Sequence[Example] = (),
    out_dir: str | Path | None = None,
) -> tuple[ModelParams, RunLog]:
    """Combined-objective finetuning from a base checkpoint.

    Per batch: forward every example, re-decode the dynamic top-k and mine a
    hard negative per example (skipping the contrastive term where none is
    eligible), then take one AdamW step on the combined objective, rank-weight
    logits included. With objective="ce" the same loop trains plain gold-span
    cross-entropy as a control.
    """
    log = RunLog()
    encs, skipped = _encode_usable(config, train_examples, vocab)
    params = init.copy()
    if params.u.shape[0] != config.loss.k_frozen:
        params = replace_u(params, np.zeros(config.loss.k_frozen))
        log.add(kind="setup_note", note="hard-weight logits re-initialized to match k_frozen")
    enc_cfg = replace(config.encoder, num_hard_weights=config.loss.k_frozen)
    config = replace(config, encoder=enc_cfg)

    if config.objective == "combined":
        missing = [enc.id for enc in encs if enc.id not in store]
        if missing:
            raise ValueError(f"candidate store is missing {len(missing)} example(s), e.g. {missing[:3]}")
        frozen_map = {enc.id: _frozen_spans_from_record(store[enc.id], enc, config.loss.k_frozen) for enc in encs}
    else:
        frozen_map = {}

    log.add(kind="setup", phase="finetune", objective=config.objective, examples=len(encs), skipped_unusable=skipped)
    state = init_adam_state(config.encoder)
    rng = np.random.default_rng(config.seed)
    steps = total_steps(len(encs), config.batch_size, config.epochs)
    warmup_steps = math.ceil(config.warmup * steps)
    probe = encs[: config.probe_count]
    mine_cache: dict[str, tuple[int, list[Span]]] = {}

    step = 0
    for _ in range(config.epochs):
        for batch_idx in _batches(rng, len(encs), config.batch_size):
            batch_encs = [encs[int(i)] for i in batch_idx]
            if config.objective == "ce":
                grads = zero_params(config.encoder)
                batch_loss = 0.0
                inv_b = 1.0 / len(batch_encs)
                for enc in batch_encs:
                    trace = forward(params, enc)
                    loss, d_slp, d_elp = ce_loss_grads(trace, enc.gold_in_sequence)
                    batch_loss += loss * inv_b
                    _accumulate(grads, backward(params, trace, UpstreamGrads(d_slp * inv_b, d_elp * inv_b)))
                adamw_step(params, grads, state, _lr_at(config.lr, step, warmup_steps), config.betas, config.eps, config.weight_decay)
                step += 1
                if not np.isfinite(batch_loss):
                    raise RuntimeError(f"non-finite loss at step {step}")
                log.add(kind="step", phase="finetune", step=step, objective="ce", combined=batch_loss)
                _maybe_checkpoint(config, params, probe, step, steps, out_dir, log, "finetune")
                _maybe_eval(config, params, dev_examples, vocab, step, log)
                continue

            if config.z_refresh_every > 0 and step > 0 and step % config.z_refresh_every == 0:
                frozen_map = _refresh_frozen(params, config, encs)
                log.add(kind="z_refresh", step=step)

            items, mined_log = _assemble_batch(params, config, batch_encs, frozen_map, mine_cache, step)
            res = combined_batch(params, items, config)
            if not np.isfinite(res.combined):
                raise RuntimeError(f"non-finite loss at step {step}")
            adamw_step(params, res.grads, state, _lr_at(config.lr, step, warmup_steps), config.betas, config.eps, config.weight_decay)
            step += 1
            log.add(
                kind="step",
                phase="finetune",
                step=step,
                objective="combined",
                hard=res.hard,
                contrast=res.contrast,
                combined=res.combined,
                contrastive_items=res.contrastive_items,
                contrastive_skipped=len(items) - res.contrastive_items if config.loss.alpha > 0 else len(items),
            )
            if config.log_mined and config.loss.alpha > 0:
                log.add(kind="mined", step=step, selections=mined_log)
            _maybe_checkpoint(config, params, probe, step, steps, out_dir, log, "finetune")
            _maybe_eval(config, params, dev_examples, vocab, step, log)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "finetuned.ckpt", config.encoder, params)
        log.save(out / "runlog_finetune.jsonl")
    return params, log


def replace_u(params: ModelParams, new_u: np.ndarray) -> ModelParams:
    out = params.copy()
    out.u = np.asarray(new_u, dtype=np.float64).copy()
    return out


def _refresh_frozen(params: ModelParams, config: TrainConfig, encs: Sequence[EncodedExample]) -> dict[str, list[Span]]:
    k = config.loss.k_frozen
    out = {}
    for enc in encs:
        trace = forward(params, enc)
        preds = topk_spans(trace, enc, k, config.max_answer_len)
        frozen, _ = build_frozen_set(preds, gold_scored(trace, enc.gold_in_sequence), k, config.z_match)
        out[enc.id] = frozen.spans()
    return out


def _assemble_batch(
    params: ModelParams,
    config: TrainConfig,
    batch_encs: Sequence[EncodedExample],
    frozen_map: dict[str, list[Span]],
    mine_cache: dict[str, tuple[int, list[Span]]],
    step: int,
) -> tuple[list[BatchItem], list[dict]]:
    items = []
    mined_log = []
    for enc in batch_encs:
        gold = enc.gold_in_sequence
        negs: list[Span] = []
        if config.loss.alpha > 0.0:
            cached = mine_cache.get(enc.id)
            if cached is not None and step - cached[0] < config.remine_every:
                negs = cached[1]
            else:
                trace = forward(params, enc)
                dyn = topk_spans(trace, enc, config.loss.k_dynamic, config.max_answer_len)
                rng = mining_rng(config.seed, enc.id, step) if config.loss.mining.variant == "random" else None
                negs = select_hard_negatives(trace, dyn, gold, config.loss.mining, rng)
                if config.remine_every > 1:
                    mine_cache[enc.id] = (step, negs)
            if config.log_mined:
                mined_log.append(
                    {
                        "id": enc.id,
                        "gold": [gold.start, gold.end, gold.text],
                        "negatives": [[s.start, s.end, s.text] for s in negs],
                    }
                )
        items.append(BatchItem(enc=enc, gold=gold, frozen_spans=frozen_map[enc.id], neg_spans=negs))
    return items, mined_log


def run_eval(
    params: ModelParams,
    config: TrainConfig,
    examples: Sequence[Example],
    vocab: Vocab,
    k_list: Sequence[int] = (1, 3, 5, 10),
) -> EvalReport:
    return evaluate(
        params,
        config.encoder,
        examples,
        vocab,
        k_list=k_list,
        max_answer_len=config.max_answer_len,
        question_max_len=config.question_max_len,
    )
