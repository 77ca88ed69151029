"""Show the recall gap between top-1 and top-10 decoding.

A partially trained model often ranks the right span inside its top-10 while
putting a boundary-confused neighbor at top-1. That gap is the headroom the
two-stage finetuning targets.
"""

from spanforge.corpus import CorpusSpec, generate_corpus, encode
from spanforge.encoder import EncoderConfig, forward
from spanforge.losses import LossConfig
from spanforge.spandecode import topk_spans
from spanforge.trainer import TrainConfig, run_eval, train_base

ds = generate_corpus(CorpusSpec(num_examples=1200, num_dev=200, num_test=200, seed=0))
cfg = TrainConfig(
    encoder=EncoderConfig(vocab_size=len(ds.vocab)),
    loss=LossConfig(),
    lr=5e-3,
    epochs=10,
    batch_size=32,
    seed=0,
    checkpoint_every=0,
)
print("training the base model briefly ...")
params, _ = train_base(cfg, ds.train, ds.vocab)

report = run_eval(params, cfg, ds.dev, ds.vocab, k_list=(1, 3, 5, 10))
print("\ndev exact match by candidate budget:")
for k, v in report.topk.items():
    print(f"  top-{k:<2} EM = {v:.3f}")
print(f"gap top-10 minus top-1: {report.topk[10] - report.topk[1]:+.3f}")

print("\none example's ranked candidates:")
ex = ds.dev[0]
enc = encode(ex, ds.vocab, cfg.encoder.max_len)
trace = forward(params, enc)
for rank, s in enumerate(topk_spans(trace, enc, 5, cfg.max_answer_len).ranked, 1):
    marker = "  <- gold" if s.span.text == ex.gold.text else ""
    print(f"  {rank}. {s.span.text!r} (score {s.score:+.2f}){marker}")
print(f"gold answer: {ex.gold.text!r}")
