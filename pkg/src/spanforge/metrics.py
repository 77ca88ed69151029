"""Exact match, macro-averaged token-overlap F1, top-k exact match, and the
dataset-level evaluation driver.

Default normalization is lowercase + whitespace collapse only. The
English-specific SQuAD conventions (article stripping, punctuation removal)
are available behind ``squad_style=True`` for real English data; the
synthetic corpus has neither articles nor punctuation.
"""

from __future__ import annotations

import csv
import json
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Example, Vocab, encode
from .encoder import EncoderConfig, ModelParams, forward
from .spandecode import topk_spans

_PUNCT = set(string.punctuation)
_ARTICLES = {"a", "an", "the"}


def normalize(text: str, squad_style: bool = False) -> str:
    """Lowercase, trim, collapse runs of whitespace to single spaces."""
    text = text.lower()
    if squad_style:
        text = "".join(ch for ch in text if ch not in _PUNCT)
        return " ".join(t for t in text.split() if t not in _ARTICLES)
    return " ".join(text.split())


def exact_match(pred: str, gold: str, squad_style: bool = False) -> int:
    return int(normalize(pred, squad_style) == normalize(gold, squad_style))


def f1_overlap(pred: str, gold: str, squad_style: bool = False) -> float:
    """Token-multiset overlap F1; 1.0 when both normalize to empty."""
    p_toks = normalize(pred, squad_style).split()
    g_toks = normalize(gold, squad_style).split()
    if not p_toks and not g_toks:
        return 1.0
    overlap = sum((Counter(p_toks) & Counter(g_toks)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p_toks)
    recall = overlap / len(g_toks)
    return 2.0 * precision * recall / (precision + recall)


def topk_em(preds: Sequence[str], gold: str, k: int, squad_style: bool = False) -> int:
    """1 iff any of the first k ranked prediction texts exact-matches gold."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(exact_match(p, gold, squad_style) for p in preds[:k]))


@dataclass
class EvalReport:
    records: list[dict]
    em: float
    f1: float
    topk: dict[int, float]
    k_list: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "aggregates": {"em": self.em, "f1": self.f1, "topk_em": {str(k): v for k, v in self.topk.items()}},
            "records": self.records,
        }

    def save_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")

    def save_csv(self, path: str | Path) -> None:
        """Aggregate CSV, one row per k: columns k, em, f1."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "em", "f1"])
            for k in self.k_list:
                writer.writerow([k, repr(self.topk[k]), repr(self.f1)])

    @classmethod
    def load_json(cls, path: str | Path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        agg = obj["aggregates"]
        topk = {int(k): v for k, v in agg["topk_em"].items()}
        return cls(
            records=obj["records"],
            em=agg["em"],
            f1=agg["f1"],
            topk=topk,
            k_list=tuple(sorted(topk)),
        )


def evaluate(
    params: ModelParams,
    config: EncoderConfig,
    examples: Iterable[Example],
    vocab: Vocab,
    k_list: Sequence[int] = (1, 3, 5, 10),
    max_answer_len: int = 8,
    question_max_len: int = 64,
    squad_style: bool = False,
) -> EvalReport:
    """Decode top-max(k) spans per example and aggregate EM/F1/top-k EM."""
    k_list = tuple(k_list)
    if not k_list or min(k_list) < 1:
        raise ValueError("k_list must contain positive ks")
    k_max = max(k_list)
    records = []
    for ex in examples:
        enc = encode(ex, vocab, config.max_len, question_max_len)
        trace = forward(params, enc)
        preds = topk_spans(trace, enc, k_max, max_answer_len)
        texts = [s.span.text for s in preds.ranked]
        top1 = texts[0] if texts else ""
        rec = {
            "id": ex.id,
            "top_preds": texts,
            "gold": ex.gold.text,
            "em": exact_match(top1, ex.gold.text, squad_style),
            "f1": f1_overlap(top1, ex.gold.text, squad_style),
            "topk_em": {str(k): topk_em(texts, ex.gold.text, k, squad_style) for k in k_list},
        }
        records.append(rec)
    if not records:
        raise ValueError("evaluate needs a non-empty dataset")
    n = len(records)
    return EvalReport(
        records=records,
        em=sum(r["em"] for r in records) / n,
        f1=sum(r["f1"] for r in records) / n,
        topk={k: sum(r["topk_em"][str(k)] for r in records) / n for k in k_list},
        k_list=k_list,
    )
