# The evaluation toolkit on handmade examples: ranking promotion,
# per-user bigram perplexity, distinct-n diversity, BLEU-1, and the
# word-embedding similarities.

import numpy as np

from pagen import metrics as MX

print("rank promotion")
truth_first = [-1.0, -0.5, -1.5, -2.0]
print(f"  scores {truth_first} -> rank {MX.rank_count(truth_first)} "
      "(one distractor above the truth)")

print("\nper-user bigram perplexity")
background = [["w1", "w2", "w3"], ["w2", "w4"], ["w1", "w4", "w2"]]
lm = MX.BigramLM(background, lam=0.7)
lm.fit_user([["w1", "w2"], ["w1", "w2", "w3"]])
for probe in (["w1", "w2"], ["w4", "w4"]):
    print(f"  ppl({' '.join(probe)}) = {lm.perplexity(probe):.2f}")

print("\ndistinct-n across per-user replies to one query")
replies = [["sure", "thing"], ["sure", "why", "not"], ["sounds", "good"]]
print(f"  distinct-1 = {MX.distinct_n(replies, 1):.3f}, "
      f"distinct-2 = {MX.distinct_n(replies, 2):.3f}")

print("\nBLEU-1 with brevity penalty")
print(f"  exact match: {MX.bleu1(['a', 'b'], ['a', 'b']):.3f}")
print(f"  half match:  {MX.bleu1(['a', 'x'], ['a', 'b']):.3f}")
print(f"  too short:   {MX.bleu1(['a'], ['a', 'b']):.3f}  (= e^-1 * 1.0)")

print("\nembedding metrics (average / extrema / greedy)")
rng = np.random.default_rng(0)
vectors = {w: rng.standard_normal(8) for w in ("cat", "dog", "pet", "car")}
for cand, ref in ((["cat", "dog"], ["pet", "dog"]), (["car"], ["cat", "dog"])):
    a, e, g = MX.embedding_metrics(cand, ref, vectors)
    print(f"  {cand} vs {ref}: {a:.3f} / {e:.3f} / {g:.3f}")
