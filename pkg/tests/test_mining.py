import numpy as np
import pytest

from spanforge.corpus import Span
from spanforge.encoder import EncoderConfig, forward, init_params, span_repr
from spanforge.mining import MiningStrategy, mining_rng, select_hard_negatives
from spanforge.numeric import cosine_sim
from spanforge.spandecode import PredictionSet, ScoredSpan, topk_spans
from spanforge.corpus import Example, Vocab, encode


VOCAB = Vocab(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "what", "k0", "v0", "v1", "v2", "f0", "f1"])


def real_trace(seed=0, passage=("f0", "v0", "v1", "f1", "v0", "v2"), gold=(1, 2)):
    ex = Example(
        id="m0",
        question=("what", "k0"),
        passage=passage,
        gold=Span(gold[0], gold[1], " ".join(passage[gold[0] : gold[1] + 1])),
    )
    enc = encode(ex, VOCAB, max_len=12)
    cfg = EncoderConfig(vocab_size=len(VOCAB), d_model=8, d_ff=12, max_len=12, num_hard_weights=3)
    params = init_params(cfg, seed=seed)
    return forward(params, enc), enc


def scored(start, end, text, score):
    return ScoredSpan(span=Span(start, end, text), score=score, log_prob=-1.0)


class TestEligibility:
    def test_only_candidate_returned(self):
        trace, enc = real_trace()
        gold = enc.gold_in_sequence
        other = Span(gold.start + 3, gold.start + 3, enc.passage_tokens[3])
        cands = PredictionSet(
            ranked=[
                scored(gold.start, gold.end, gold.text, 2.0),
                scored(other.start, other.end, other.text, 1.0),
            ],
            kind="dynamic",
        )
        negs = select_hard_negatives(trace, cands, gold, MiningStrategy())
        assert [s.positions for s in negs] == [other.positions]

    def test_textual_duplicate_excluded(self):
        # passage repeats "v0" at slots 1 and 4; gold is slot 1, the copy at 4
        # is positionally different but textually equal, so ineligible
        trace, enc = real_trace(gold=(1, 1))
        gold = enc.gold_in_sequence
        p0 = enc.passage_region[0]
        copy_pos = p0 + 4
        cands = PredictionSet(
            ranked=[
                scored(copy_pos, copy_pos, "v0", 3.0),
                scored(p0 + 5, p0 + 5, "v2", 2.0),
            ],
            kind="dynamic",
        )
        negs = select_hard_negatives(trace, cands, gold, MiningStrategy())
        assert [s.text for s in negs] == ["v2"]

    def test_no_eligible_signals_skip(self):
        trace, enc = real_trace(gold=(1, 1))
        gold = enc.gold_in_sequence
        p0 = enc.passage_region[0]
        cands = PredictionSet(
            ranked=[scored(gold.start, gold.end, "v0", 2.0), scored(p0 + 4, p0 + 4, "v0", 1.0)],
            kind="dynamic",
        )
        assert select_hard_negatives(trace, cands, gold, MiningStrategy()) == []


class TestMostSimilar:
    def test_argmax_matches_exhaustive_recompute(self):
        rng = np.random.default_rng(0)
        for trial in range(500):
            trace, enc = real_trace(seed=trial)
            gold = enc.gold_in_sequence
            dyn = topk_spans(trace, enc, k=12, max_answer_len=3)
            negs = select_hard_negatives(trace, dyn, gold, MiningStrategy())
            if not negs:
                continue
            from spanforge.metrics import normalize

            gold_vec = span_repr(trace, gold)
            best, best_sim = None, -2.0
            for s in dyn.ranked:
                if s.span.positions == gold.positions:
                    continue
                if normalize(s.span.text) == normalize(gold.text):
                    continue
                sim = cosine_sim(span_repr(trace, s.span), gold_vec)
                if sim > best_sim:
                    best, best_sim = s.span, sim
            assert negs[0].positions == best.positions

    def test_similarity_ranking_fixture(self):
        trace, enc = real_trace(seed=3)
        gold = enc.gold_in_sequence
        dyn = topk_spans(trace, enc, k=10, max_answer_len=3)
        got = select_hard_negatives(trace, dyn, gold, MiningStrategy(theta=3))
        gold_vec = span_repr(trace, gold)
        sims = [cosine_sim(span_repr(trace, s), gold_vec) for s in got]
        assert sims == sorted(sims, reverse=True)

    def test_scale_invariance_of_argmax(self):
        trace, enc = real_trace(seed=5)
        gold = enc.gold_in_sequence
        dyn = topk_spans(trace, enc, k=10, max_answer_len=3)
        base = select_hard_negatives(trace, dyn, gold, MiningStrategy())
        trace.token_reprs = trace.token_reprs * 7.3
        scaled = select_hard_negatives(trace, dyn, gold, MiningStrategy())
        assert [s.positions for s in base] == [s.positions for s in scaled]

    def test_theta_returns_that_many(self):
        trace, enc = real_trace(seed=6)
        gold = enc.gold_in_sequence
        dyn = topk_spans(trace, enc, k=12, max_answer_len=3)
        assert len(select_hard_negatives(trace, dyn, gold, MiningStrategy(theta=2))) == 2


class TestOtherStrategies:
    def test_top1_takes_first_eligible(self):
        trace, enc = real_trace(seed=7)
        gold = enc.gold_in_sequence
        dyn = topk_spans(trace, enc, k=10, max_answer_len=3)
        got = select_hard_negatives(trace, dyn, gold, MiningStrategy(variant="top1"))
        from spanforge.metrics import normalize

        for s in dyn.ranked:
            if s.span.positions != gold.positions and normalize(s.span.text) != normalize(gold.text):
                assert got[0].positions == s.span.positions
                break

    def test_random_is_deterministic_per_example_step(self):
        trace, enc = real_trace(seed=8)
        gold = enc.gold_in_sequence
        dyn = topk_spans(trace, enc, k=10, max_answer_len=3)
        strat = MiningStrategy(variant="random")
        a = select_hard_negatives(trace, dyn, gold, strat, mining_rng(0, enc.id, 5))
        b = select_hard_negatives(trace, dyn, gold, strat, mining_rng(0, enc.id, 5))
        c = select_hard_negatives(trace, dyn, gold, strat, mining_rng(0, enc.id, 6))
        assert a == b
        assert a != c or True  # different step may coincide; determinism is the contract

    def test_random_requires_rng(self):
        trace, enc = real_trace(seed=9)
        dyn = topk_spans(trace, enc, k=5, max_answer_len=3)
        with pytest.raises(ValueError):
            select_hard_negatives(trace, dyn, enc.gold_in_sequence, MiningStrategy(variant="random"))


def test_strategy_validation():
    with pytest.raises(ValueError):
        MiningStrategy(variant="nope")
    with pytest.raises(ValueError):
        MiningStrategy(theta=0)
