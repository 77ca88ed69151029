"""Trainable span-extraction encoder: token + position embeddings, one
residual self-attention block, a residual ReLU feed-forward, and a linear
start/end head, all in float64 with hand-derived exact backward passes.

The forward runs over the real (unpadded) prefix of the sequence, which is
equivalent to masking padded positions out of attention. Start/end logits are
set to the mask sentinel outside the passage region before any softmax, so no
probability mass ever lands on question or special tokens.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import EncodedExample, Span
from .numeric import MASK_VALUE, Mat64, Vec64, masked_log_softmax, mean_pool, softmax


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 32
    d_ff: int = 64
    max_len: int = 64
    num_hard_weights: int = 20

    def __post_init__(self):
        if min(self.vocab_size, self.d_model, self.d_ff, self.max_len, self.num_hard_weights) < 1:
            raise ValueError("all encoder dimensions must be positive")


PARAM_FIELDS = ("token_emb", "pos_emb", "wq", "wk", "wv", "w1", "w2", "head_w", "head_b", "u")


@dataclass
class ModelParams:
    """Every learnable tensor, including the hard-learning rank-weight logits u."""

    token_emb: Mat64
    pos_emb: Mat64
    wq: Mat64
    wk: Mat64
    wv: Mat64
    w1: Mat64
    w2: Mat64
    head_w: Mat64
    head_b: Vec64
    u: Vec64

    def copy(self) -> "ModelParams":
        return ModelParams(**{f: getattr(self, f).copy() for f in PARAM_FIELDS})

    def arrays(self):
        return [(f, getattr(self, f)) for f in PARAM_FIELDS]


def param_shapes(config: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, dff = config.d_model, config.d_ff
    return [
        ("token_emb", (config.vocab_size, d)),
        ("pos_emb", (config.max_len, d)),
        ("wq", (d, d)),
        ("wk", (d, d)),
        ("wv", (d, d)),
        ("w1", (d, dff)),
        ("w2", (dff, d)),
        ("head_w", (2, d)),
        ("head_b", (2,)),
        ("u", (config.num_hard_weights,)),
    ]


def init_params(config: EncoderConfig, seed: int) -> ModelParams:
    """Uniform [-1/sqrt(d), 1/sqrt(d)] weights; zero head bias and rank logits."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.d_model)
    fields = {}
    for name, shape in param_shapes(config):
        if name in ("head_b", "u"):
            fields[name] = np.zeros(shape, dtype=np.float64)
        else:
            fields[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(**fields)


def zero_params(config: EncoderConfig) -> ModelParams:
    return ModelParams(**{name: np.zeros(shape, dtype=np.float64) for name, shape in param_shapes(config)})


def flatten_params(params: ModelParams) -> Vec64:
    return np.concatenate([getattr(params, f).ravel() for f in PARAM_FIELDS])


def unflatten_params(flat: Vec64, config: EncoderConfig) -> ModelParams:
    flat = np.asarray(flat, dtype=np.float64)
    fields = {}
    off = 0
    for name, shape in param_shapes(config):
        size = int(np.prod(shape))
        fields[name] = flat[off : off + size].reshape(shape).copy()
        off += size
    if off != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, layout needs {off}")
    return ModelParams(**fields)


@dataclass
class ForwardTrace:
    """Activations cached by forward; sufficient for an exact backward."""

    enc: EncodedExample
    ids: np.ndarray
    h0: Mat64
    qm: Mat64
    km: Mat64
    vm: Mat64
    attn: Mat64
    h1: Mat64
    ffn_pre: Mat64
    ffn_act: Mat64
    token_reprs: Mat64
    start_logits: Vec64
    end_logits: Vec64
    start_probs: Vec64
    end_probs: Vec64
    start_logprobs: Vec64
    end_logprobs: Vec64

    @property
    def length(self) -> int:
        return self.token_reprs.shape[0]


def _row_softmax(scores: Mat64) -> Mat64:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: ModelParams, enc: EncodedExample) -> ForwardTrace:
    """Run the encoder over one example and cache everything backward needs."""
    mask = enc.attention_mask
    n = int(mask.sum())
    if n == 0 or not np.all(mask[:n] == 1):
        raise ValueError(f"{enc.id}: attention mask must be a non-empty prefix of ones")
    ids = enc.token_ids[:n]
    V = params.token_emb.shape[0]
    if int(ids.max()) >= V:
        raise ValueError(f"{enc.id}: token id {int(ids.max())} >= vocab size {V}")
    d = params.token_emb.shape[1]

    h0 = params.token_emb[ids] + params.pos_emb[:n]
    qm = h0 @ params.wq
    km = h0 @ params.wk
    vm = h0 @ params.wv
    attn = _row_softmax((qm @ km.T) / np.sqrt(d))
    h1 = h0 + attn @ vm
    ffn_pre = h1 @ params.w1
    ffn_act = np.maximum(ffn_pre, 0.0)
    h2 = h1 + ffn_act @ params.w2

    logits = h2 @ params.head_w.T + params.head_b
    start_logits = logits[:, 0].copy()
    end_logits = logits[:, 1].copy()
    p0, p1 = enc.passage_region
    region = np.zeros(n, dtype=bool)
    region[p0 : p1 + 1] = True
    start_logits[~region] = MASK_VALUE
    end_logits[~region] = MASK_VALUE

    return ForwardTrace(
        enc=enc,
        ids=ids,
        h0=h0,
        qm=qm,
        km=km,
        vm=vm,
        attn=attn,
        h1=h1,
        ffn_pre=ffn_pre,
        ffn_act=ffn_act,
        token_reprs=h2,
        start_logits=start_logits,
        end_logits=end_logits,
        start_probs=softmax(start_logits),
        end_probs=softmax(end_logits),
        start_logprobs=masked_log_softmax(start_logits),
        end_logprobs=masked_log_softmax(end_logits),
    )


@dataclass
class UpstreamGrads:
    """Loss gradients entering the encoder.

    ``d_start_logprob``/``d_end_logprob`` are with respect to the masked
    log-softmax vectors (length n); ``d_token_reprs`` with respect to the
    contextualized token rows (n x d); ``d_u`` passes straight through to the
    rank-weight logits.
    """

    d_start_logprob: Vec64 | None = None
    d_end_logprob: Vec64 | None = None
    d_token_reprs: Mat64 | None = None
    d_u: Vec64 | None = None


def _logprob_to_logit_grad(d_logprob: Vec64, probs: Vec64) -> Vec64:
    # d/dlogit_j [sum_i c_i logsoftmax_i] = c_j - p_j * sum_i c_i; masked
    # positions have c = p = 0 so they receive exactly zero gradient.
    return d_logprob - probs * d_logprob.sum()


def backward(params: ModelParams, trace: ForwardTrace, upstream: UpstreamGrads) -> ModelParams:
    """Exact gradient of the upstream-weighted objective w.r.t. every parameter."""
    n = trace.length
    d = params.token_emb.shape[1]
    config_k = params.u.shape[0]

    def _vec(g, name):
        if g is None:
            return np.zeros(n, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (n,):
            raise ValueError(f"{name} has shape {g.shape}, expected ({n},)")
        return g

    d_sl = _logprob_to_logit_grad(_vec(upstream.d_start_logprob, "d_start_logprob"), trace.start_probs)
    d_el = _logprob_to_logit_grad(_vec(upstream.d_end_logprob, "d_end_logprob"), trace.end_probs)

    d_h2 = np.outer(d_sl, params.head_w[0]) + np.outer(d_el, params.head_w[1])
    if upstream.d_token_reprs is not None:
        dtr = np.asarray(upstream.d_token_reprs, dtype=np.float64)
        if dtr.shape != (n, d):
            raise ValueError(f"d_token_reprs has shape {dtr.shape}, expected ({n}, {d})")
        d_h2 = d_h2 + dtr
    g_head_w = np.vstack([d_sl @ trace.token_reprs, d_el @ trace.token_reprs])
    g_head_b = np.array([d_sl.sum(), d_el.sum()])

    d_act = d_h2 @ params.w2.T
    g_w2 = trace.ffn_act.T @ d_h2
    d_pre = d_act * (trace.ffn_pre > 0.0)
    g_w1 = trace.h1.T @ d_pre
    d_h1 = d_h2 + d_pre @ params.w1.T

    d_ctx = d_h1
    d_attn = d_ctx @ trace.vm.T
    d_vm = trace.attn.T @ d_ctx
    row_dot = (d_attn * trace.attn).sum(axis=1, keepdims=True)
    d_scores = trace.attn * (d_attn - row_dot)
    scale = 1.0 / np.sqrt(d)
    d_qm = (d_scores @ trace.km) * scale
    d_km = (d_scores.T @ trace.qm) * scale

    g_wq = trace.h0.T @ d_qm
    g_wk = trace.h0.T @ d_km
    g_wv = trace.h0.T @ d_vm
    d_h0 = d_h1 + d_qm @ params.wq.T + d_km @ params.wk.T + d_vm @ params.wv.T

    g_token = np.zeros_like(params.token_emb)
    np.add.at(g_token, trace.ids, d_h0)
    g_pos = np.zeros_like(params.pos_emb)
    g_pos[:n] = d_h0

    if upstream.d_u is not None:
        g_u = np.asarray(upstream.d_u, dtype=np.float64)
        if g_u.shape != (config_k,):
            raise ValueError(f"d_u has shape {g_u.shape}, expected ({config_k},)")
        g_u = g_u.copy()
    else:
        g_u = np.zeros(config_k, dtype=np.float64)

    return ModelParams(
        token_emb=g_token,
        pos_emb=g_pos,
        wq=g_wq,
        wk=g_wk,
        wv=g_wv,
        w1=g_w1,
        w2=g_w2,
        head_w=g_head_w,
        head_b=g_head_b,
        u=g_u,
    )


def span_repr(trace: ForwardTrace, span: Span) -> Vec64:
    """Mean-pooled token representation of a passage span (sequence coords)."""
    p0, p1 = trace.enc.passage_region
    if not (p0 <= span.start and span.end <= p1):
        raise ValueError(f"span ({span.start}, {span.end}) outside passage region ({p0}, {p1})")
    return mean_pool(trace.token_reprs, range(span.start, span.end + 1))


def question_repr(trace: ForwardTrace) -> Vec64:
    """Mean-pooled representation of the question tokens."""
    q0, q1 = trace.enc.question_region
    if q1 < q0:
        raise ValueError(f"{trace.enc.id}: empty question region")
    return mean_pool(trace.token_reprs, range(q0, q1 + 1))


CHECKPOINT_MAGIC = b"SPANFORGE-CKPT-1\n"


def save_checkpoint(path: str | Path, config: EncoderConfig, params: ModelParams) -> None:
    """Write magic + one JSON header line + little-endian float64 blobs.

    Field order is PARAM_FIELDS; byte output is a pure function of
    (config, params).
    """
    header = {
        "config": asdict(config),
        "fields": [{"name": name, "shape": list(shape)} for name, shape in param_shapes(config)],
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[EncoderConfig, ModelParams]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a spanforge checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        config = EncoderConfig(**header["config"])
        fields = {}
        for entry in header["fields"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint at field {entry['name']}")
            fields[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return config, ModelParams(**fields)
