# Generate a synthetic persona corpus and look at what makes it
# persona-bearing: each user owns signature tokens and a private unigram
# preference over a shared reply pool.

from collections import Counter

from pagen import corpus as C

triples = C.generate_synthetic(num_users=4, triples_per_user=200,
                               signature_strength=0.9, seed=0)
print(f"{len(triples)} triples, users: {sorted({t.user_id for t in triples})}\n")

print("sample lines:")
for t in triples[:3] + triples[200:202]:
    print(f"  {t.user_id:6s} | {' '.join(t.query):28s} | {' '.join(t.reply)}")

print("\nsignature token rate per user (target 0.9):")
for k in range(4):
    uid = f"user{k}"
    replies = [t.reply for t in triples if t.user_id == uid]
    hits = sum(1 for r in replies if any(tok.startswith(f"sig{k}_") for tok in r))
    print(f"  {uid}: {hits / len(replies):.3f}")

print("\ntop reply words by user (the unigram preference):")
for k in range(4):
    uid = f"user{k}"
    counts = Counter(tok for t in triples if t.user_id == uid for tok in t.reply
                     if tok.startswith("w"))
    top = ", ".join(w for w, _ in counts.most_common(4))
    print(f"  {uid}: {top}")

train, test = C.split(triples, 0.9, seed=0)
print(f"\nstratified split: {len(train)} train / {len(test)} test, "
      f"every user in train: {sorted({t.user_id for t in train}) == sorted({t.user_id for t in triples})}")
