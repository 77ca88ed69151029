"""Verify the hand-derived backward pass against central finite differences.

Every objective in the package routes its gradient through the encoder's
analytic backward; this script spot-checks the full combined objective on a
small model and reports the worst relative disagreement.
"""

from spanforge.corpus import CorpusSpec, DistractorPolicy, Span, encode, generate_corpus, span_text
from spanforge.encoder import EncoderConfig, flatten_params, forward, init_params, unflatten_params
from spanforge.losses import LossConfig
from spanforge.mining import MiningStrategy, select_hard_negatives
from spanforge.numeric import finite_diff_grad, max_rel_error
from spanforge.spandecode import topk_spans
from spanforge.trainer import BatchItem, TrainConfig, collect_candidates, combined_batch

ds = generate_corpus(
    CorpusSpec(vocab_size=50, num_examples=30, passage_len=10, answer_len_range=(1, 2),
               distractors=DistractorPolicy(1, 1, 1), seed=0, num_dev=5, num_test=5)
)
cfg = TrainConfig(
    encoder=EncoderConfig(vocab_size=len(ds.vocab), d_model=4, d_ff=6, max_len=18, num_hard_weights=3),
    loss=LossConfig(k_frozen=3, k_dynamic=6, alpha=0.5, tau=10.0),
    max_answer_len=3,
)
params = init_params(cfg.encoder, seed=1)
print(f"model has {flatten_params(params).size} parameters")

records, _ = collect_candidates(params, cfg, ds.train[:3], ds.vocab)
store = {r["id"]: r for r in records}

items = []
for ex in ds.train[:3]:
    enc = encode(ex, ds.vocab, cfg.encoder.max_len)
    tr = forward(params, enc)
    dyn = topk_spans(tr, enc, cfg.loss.k_dynamic, cfg.max_answer_len)
    negs = select_hard_negatives(tr, dyn, enc.gold_in_sequence, MiningStrategy())
    frozen = [
        Span(s["start"], s["end"], span_text(enc, s["start"], s["end"]))
        for s in store[enc.id]["spans"]
    ]
    items.append(BatchItem(enc, enc.gold_in_sequence, frozen, negs))

res = combined_batch(params, items, cfg)
print(f"combined loss = {res.combined:.6f} (hard {res.hard:.6f}, contrastive {res.contrast:.6f})")

numeric = finite_diff_grad(
    lambda flat: combined_batch(unflatten_params(flat, cfg.encoder), items, cfg).combined,
    flatten_params(params),
    eps=1e-5,
)
err = max_rel_error(flatten_params(res.grads), numeric)
print(f"worst relative gradient error vs central differences: {err:.3e}")
assert err <= 1e-4
print("analytic backward agrees with the finite-difference oracle")
