"""Persona evaluation metrics (rank promotion, per-user bigram perplexity,
between-user distinct-n) and the standard BLEU-1 / word-embedding metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import generation as G


@dataclass
class MetricConfig:
    n_distractors: int = 10
    m_users: int = 2
    rounds: int = 10
    min_user_utterances: int = 1
    beam_width: int = 10
    max_length: int = 30

    def __post_init__(self):
        if self.n_distractors < 1 or self.m_users < 2 or self.rounds < 1:
            raise ValueError("invalid metric configuration")


# ---------------------------------------------------------------------------
# per-user bigram language model

BOS_TOK = "<s>"
EOS_TOK = "</s>"
UNK_TOK = "<oov>"


class BigramLM:
    """Interpolated bigram model: lam * user MLE + (1 - lam) * add-one
    smoothed background.  When the user has never seen the context, the
    user component falls back to the background so that every per-context
    distribution still sums to one.
    """

    def __init__(self, background_sentences, lam=0.7):
        self.lam = lam
        self.vocab = set([EOS_TOK, UNK_TOK])
        for s in background_sentences:
            self.vocab.update(s)
        self.v_size = len(self.vocab)
        self.bg_bi, self.bg_ctx = self._count(background_sentences)
        self.user_bi = {}
        self.user_ctx = {}

    def _norm(self, tok):
        return tok if tok in self.vocab or tok == BOS_TOK else UNK_TOK

    def _count(self, sentences):
        bi, ctx = {}, {}
        for s in sentences:
            toks = [BOS_TOK] + [self._norm(t) for t in s] + [EOS_TOK]
            for a, b in zip(toks, toks[1:]):
                bi[(a, b)] = bi.get((a, b), 0) + 1
                ctx[a] = ctx.get(a, 0) + 1
        return bi, ctx

    def fit_user(self, sentences):
        """Finetune on one user's utterances; counts interpolate against
        the shared background at query time."""
        self.user_bi, self.user_ctx = self._count(sentences)

    def prob(self, prev, word):
        prev, word = self._norm(prev), self._norm(word)
        p_bg = (self.bg_bi.get((prev, word), 0) + 1) / (self.bg_ctx.get(prev, 0) + self.v_size)
        cu = self.user_ctx.get(prev, 0)
        p_user = self.user_bi.get((prev, word), 0) / cu if cu else p_bg
        return self.lam * p_user + (1 - self.lam) * p_bg

    def perplexity(self, tokens):
        if not tokens:
            raise ValueError("empty sequence")
        seq = [BOS_TOK] + list(tokens) + [EOS_TOK]
        logp = sum(math.log(self.prob(a, b)) for a, b in zip(seq, seq[1:]))
        return math.exp(-logp / (len(seq) - 1))


def build_user_lms(train_triples, evaluated_users, lam=0.7):
    """Background counts from all reply-side utterances, finetuned per user."""
    background = [t.reply for t in train_triples]
    lms = {}
    for user in evaluated_users:
        lm = BigramLM(background, lam=lam)
        lm.fit_user([t.reply for t in train_triples if t.user_id == user])
        lms[user] = lm
    return lms


@dataclass
class UpplReport:
    value: float
    per_user: dict = field(default_factory=dict)
    skipped: int = 0


def uppl(responses_by_user, lms):
    """Average perplexity of generated replies under each user's LM;
    averaged over responses within a user, then over users."""
    per_user = {}
    skipped = 0
    for user, responses in responses_by_user.items():
        vals = []
        for r in responses:
            if not r:
                skipped += 1
                continue
            vals.append(lms[user].perplexity(r))
        if vals:
            per_user[user] = float(np.mean(vals))
    value = float(np.mean(list(per_user.values()))) if per_user else float("nan")
    return UpplReport(value=value, per_user=per_user, skipped=skipped)


# ---------------------------------------------------------------------------
# rank promotion against a reference seq2seq

@dataclass
class URankReport:
    value: float
    per_round: list = field(default_factory=list)
    spread: float = 0.0
    skipped: int = 0


def rank_count(scores):
    """Number of distractors scored strictly above the ground truth;
    scores[0] is the truth, the rest are distractors.  Ties do not count."""
    scores = np.asarray(scores)
    return int((scores[1:] > scores[0]).sum())


def urank(eval_items, model, reference, config, seed=0):
    """Rate of rank-promoted ground-truth replies.

    eval_items: list of (user_index, query ids, reply ids, distractor id
    lists).  model / reference: (params, ModelConfig) pairs.  Rank is the
    number of distractors scored strictly above the ground truth; uRank is
    1 when the evaluated model ranks the truth strictly better than the
    reference does.  Latent models are averaged over config.rounds z seeds.
    """
    m_params, m_config = model
    s_params, s_config = reference
    rounds = config.rounds if m_config.is_latent or s_config.is_latent else 1
    usable = [(u, q, r, d) for u, q, r, d in eval_items if len(d) >= config.n_distractors]
    skipped = len(eval_items) - len(usable)
    per_round = []
    for rnd in range(rounds):
        hits = 0
        for u, q, r, dists in usable:
            replies = [r] + list(dists[: config.n_distractors])
            m_scores = G.score_responses(q, replies, u, m_params, m_config,
                                         z_mode="sample", seed=seed * 1000 + rnd)
            s_scores = G.score_responses(q, replies, u, s_params, s_config,
                                         z_mode="sample", seed=seed * 1000 + rnd)
            rank_m = rank_count(m_scores)
            rank_s = rank_count(s_scores)
            hits += 1 if rank_m < rank_s else 0
        per_round.append(hits / len(usable) if usable else 0.0)
    value = float(np.mean(per_round))
    spread = float(np.max(per_round) - np.min(per_round)) if len(per_round) > 1 else 0.0
    return URankReport(value=value, per_round=per_round, spread=spread, skipped=skipped)


def make_distractors(eval_items_raw, reference, config, n):
    """Generate n user-irrelevant responses per query from the reference
    model via beam search.  eval_items_raw: (user_index, query, reply)."""
    s_params, s_config = reference
    out = []
    for u, q, r in eval_items_raw:
        req = G.GenRequest(query=q, beam_width=max(n + 2, config.beam_width),
                           max_length=config.max_length, z_mode="mean")
        hyps = [h for h in G.generate(req, s_params, s_config) if h.tokens]
        out.append((u, q, r, [h.tokens for h in hyps[:n]]))
    return out


# ---------------------------------------------------------------------------
# diversity between users

def distinct_n(responses, n):
    """Unique n-grams / total n-grams across a response set."""
    grams = []
    for r in responses:
        grams.extend(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
    if not grams:
        return None
    return len(set(grams)) / len(grams)


def udistinct(queries, user_indices, model, seed=0, max_length=30):
    """Distinct-1/2 of the responses one model generates for the same
    query across m users, averaged over the query set."""
    if len(user_indices) < 2:
        raise ValueError("udistinct needs at least 2 users")
    params, config = model
    d1s, d2s, skipped = [], [], 0
    for qi, q in enumerate(queries):
        responses = []
        for u in user_indices:
            req = G.GenRequest(query=q, user_index=u, beam_width=1,
                               max_length=max_length, z_mode="sample",
                               seed=seed * 10000 + qi * 100 + u)
            hyps = G.generate(req, params, config)
            responses.append(hyps[0].tokens if hyps else [])
        d1 = distinct_n(responses, 1)
        d2 = distinct_n(responses, 2)
        if d1 is None:
            skipped += 1
            continue
        d1s.append(d1)
        d2s.append(d2 if d2 is not None else 1.0)
    if not d1s:
        return float("nan"), float("nan"), skipped
    return float(np.mean(d1s)), float(np.mean(d2s)), skipped


# ---------------------------------------------------------------------------
# standard metrics

def bleu1(candidate, reference):
    """Clipped unigram precision times the brevity penalty."""
    if not reference:
        raise ValueError("empty reference")
    if not candidate:
        return 0.0
    ref_counts = {}
    for t in reference:
        ref_counts[t] = ref_counts.get(t, 0) + 1
    cand_counts = {}
    for t in candidate:
        cand_counts[t] = cand_counts.get(t, 0) + 1
    clipped = sum(min(c, ref_counts.get(t, 0)) for t, c in cand_counts.items())
    precision = clipped / len(candidate)
    bp = math.exp(min(0.0, 1.0 - len(reference) / len(candidate)))
    return precision * bp


def load_word_vectors(path):
    """Text format: header line "count dim", then "token v1 ... vd"."""
    vectors = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        count, dim = int(header[0]), int(header[1])
        for line in f:
            parts = line.split()
            if not parts:
                continue
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            if vectors[parts[0]].shape != (dim,):
                raise ValueError(f"bad vector dimension for token {parts[0]!r}")
    if len(vectors) != count:
        raise ValueError(f"header count {count} != {len(vectors)} vectors")
    return vectors


def save_word_vectors(path, vectors):
    dim = len(next(iter(vectors.values())))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(vectors)} {dim}\n")
        for tok in sorted(vectors):
            vals = " ".join(repr(float(v)) for v in vectors[tok])
            f.write(f"{tok} {vals}\n")


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _known(tokens, vectors):
    return [vectors[t] for t in tokens if t in vectors]


def embedding_metrics(candidate, reference, vectors):
    """(Embedding Average, Vector Extrema, Greedy Matching) cosines.

    Out-of-vocabulary tokens are dropped; returns None when either side
    has no known tokens.
    """
    cv = _known(candidate, vectors)
    rv = _known(reference, vectors)
    if not cv or not rv:
        return None
    cm, rm = np.stack(cv), np.stack(rv)

    average = _cosine(cm.mean(axis=0), rm.mean(axis=0))

    def extrema(mat):
        idx = np.argmax(np.abs(mat), axis=0)
        return mat[idx, np.arange(mat.shape[1])]

    ext = _cosine(extrema(cm), extrema(rm))

    def directed(a, b):
        return float(np.mean([max(_cosine(x, y) for y in b) for x in a]))

    greedy = 0.5 * (directed(cv, rv) + directed(rv, cv))
    return average, ext, greedy
