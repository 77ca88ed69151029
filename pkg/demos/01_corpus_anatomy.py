"""Walk through one synthetic example and its planted distractor structure.

The corpus is a key/value lookup task: the question names a key, the passage
embeds that key followed by its value span (the answer), decoy facts under
other keys, and extra copies of the answer's boundary tokens. Those copies
are what make span boundaries ambiguous for a partially trained model.
"""

from spanforge.corpus import CorpusSpec, DistractorPolicy, generate_corpus

spec = CorpusSpec(
    vocab_size=80,
    num_examples=20,
    passage_len=20,
    answer_len_range=(2, 3),
    distractors=DistractorPolicy(prefix_overlap_count=2, suffix_overlap_count=1, full_decoys=1),
    seed=4,
    num_dev=4,
    num_test=4,
)
ds = generate_corpus(spec)
ex = ds.train[0]

print("question:", " ".join(ex.question))
print("passage: ", " ".join(ex.passage))
print("answer:  ", ex.gold.text, f"(tokens {ex.gold.start}..{ex.gold.end})")
print()

first, last = ex.passage[ex.gold.start], ex.passage[ex.gold.end]
prefix_copies = [i for i, t in enumerate(ex.passage) if t == first and i != ex.gold.start]
suffix_copies = [i for i, t in enumerate(ex.passage) if t == last and i != ex.gold.end]
print(f"extra occurrences of the answer's first token {first!r}: {prefix_copies}")
print(f"extra occurrences of the answer's last token {last!r}:  {suffix_copies}")

key = ex.question[1]
print(f"question key {key!r} occurs at passage position {ex.passage.index(key)} (exactly once)")
print()
print("determinism: regenerating with the same seed gives identical examples ->",
      generate_corpus(spec).train[0] == ex)
