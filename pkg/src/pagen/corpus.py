"""Dialogue corpus loading, vocabulary building, and synthetic persona data.

Corpus file format: UTF-8, LF line endings, one example per line with
exactly two TAB separators:

    user_id <TAB> query tokens <TAB> reply tokens

Tokens are whitespace-delimited; tokenization happens upstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ["<pad>", "<unk>", "<bos>", "<eos>"]

UNSPECIFIED_USER = 0
UNSPECIFIED_USER_ID = "<unk_user>"


class CorpusError(ValueError):
    pass


@dataclass
class DialogueTriple:
    user_id: str
    query: list
    reply: list

    def __post_init__(self):
        if not self.user_id:
            raise CorpusError("empty user_id")
        if not self.query or not self.reply:
            raise CorpusError("query and reply must be nonempty")


@dataclass
class Vocabulary:
    token_to_index: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, tok in enumerate(RESERVED):
            self.token_to_index.setdefault(tok, i)
        self.index_to_token = {i: t for t, i in self.token_to_index.items()}

    def __len__(self):
        return len(self.token_to_index)

    def index(self, token):
        return self.token_to_index.get(token, UNK)

    def encode(self, tokens):
        return [self.index(t) for t in tokens]

    def decode(self, indices):
        return [self.index_to_token.get(i, RESERVED[UNK]) for i in indices]

    @classmethod
    def build(cls, triples, max_size=20000):
        """Frequency-ranked vocabulary over queries and replies, top max_size
        non-reserved tokens, ties broken lexicographically for determinism."""
        counts = {}
        for t in triples:
            for tok in t.query + t.reply:
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
        mapping = {tok: i + len(RESERVED) for i, (tok, _) in enumerate(ranked)}
        return cls(token_to_index={**{t: i for i, t in enumerate(RESERVED)}, **mapping})


@dataclass
class UserTable:
    user_to_index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.user_to_index.setdefault(UNSPECIFIED_USER_ID, UNSPECIFIED_USER)
        self.index_to_user = {i: u for u, i in self.user_to_index.items()}

    def __len__(self):
        return len(self.user_to_index)

    def index(self, user_id):
        return self.user_to_index.get(user_id, UNSPECIFIED_USER)

    @classmethod
    def build(cls, user_ids):
        mapping = {UNSPECIFIED_USER_ID: UNSPECIFIED_USER}
        for u in sorted(set(user_ids)):
            mapping[u] = len(mapping)
        return cls(user_to_index=mapping)


def parse_line(line, lineno):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise CorpusError(f"line {lineno}: expected 3 TAB-separated fields, got {len(parts)}")
    user_id, query, reply = parts
    q_toks, r_toks = query.split(), reply.split()
    if not user_id or not q_toks or not r_toks:
        raise CorpusError(f"line {lineno}: empty field")
    return DialogueTriple(user_id=user_id, query=q_toks, reply=r_toks)


def read_triples(path):
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            triples.append(parse_line(line, lineno))
    if not triples:
        raise CorpusError(f"empty corpus: {path}")
    return triples


def load_corpus(path, min_utterances=1, max_vocab=20000):
    """Load triples; users with fewer than min_utterances replies are
    remapped to the unspecified user and excluded from per-user evaluation.

    Returns (triples, vocabulary, user_table).  The vocabulary here covers
    the whole file; when a train/test split is used, rebuild it from the
    train side (see split()).
    """
    triples = read_triples(path)
    counts = {}
    for t in triples:
        counts[t.user_id] = counts.get(t.user_id, 0) + 1
    kept_users = {u for u, c in counts.items() if c >= min_utterances}
    remapped = [
        t if t.user_id in kept_users
        else DialogueTriple(UNSPECIFIED_USER_ID, t.query, t.reply)
        for t in triples
    ]
    vocab = Vocabulary.build(remapped, max_size=max_vocab)
    users = UserTable.build(u for u in kept_users)
    return remapped, vocab, users


def write_corpus(path, triples):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in triples:
            f.write(f"{t.user_id}\t{' '.join(t.query)}\t{' '.join(t.reply)}\n")


def save_vocab(path, vocab):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i in range(len(vocab)):
            f.write(vocab.index_to_token[i] + "\n")


def load_vocab(path):
    with open(path, encoding="utf-8") as f:
        tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
    if tokens[:4] != RESERVED:
        raise CorpusError(f"{path}: reserved tokens missing or misplaced")
    return Vocabulary(token_to_index={t: i for i, t in enumerate(tokens)})


def save_users(path, users):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i in range(len(users)):
            f.write(users.index_to_user[i] + "\n")


def load_users(path):
    with open(path, encoding="utf-8") as f:
        ids = [line.rstrip("\n") for line in f if line.rstrip("\n")]
    if not ids or ids[0] != UNSPECIFIED_USER_ID:
        raise CorpusError(f"{path}: user table must start with the unspecified user")
    return UserTable(user_to_index={u: i for i, u in enumerate(ids)})


def split(triples, train_ratio, seed=0):
    """Per-user stratified split so every evaluated user appears in train.

    Each user keeps at least one training example; shuffling within a user
    is seeded and deterministic.
    """
    if not (0.0 < train_ratio < 1.0):
        raise CorpusError(f"train_ratio must be in (0, 1), got {train_ratio}")
    rng = np.random.default_rng(seed)
    by_user = {}
    for t in triples:
        by_user.setdefault(t.user_id, []).append(t)
    train, test = [], []
    for user in sorted(by_user):
        items = by_user[user]
        order = rng.permutation(len(items))
        n_train = max(1, int(round(len(items) * train_ratio)))
        for pos, j in enumerate(order):
            (train if pos < n_train else test).append(items[j])
    return train, test


def generate_synthetic(num_users, triples_per_user, signature_strength, seed,
                       signature_size=2, topic_count=6, query_fillers=12,
                       reply_pool=24):
    """Deterministic synthetic persona corpus.

    Each user owns a disjoint set of signature tokens and a user-specific
    unigram preference over a shared reply pool.  A reply contains one of
    the user's signature tokens with probability signature_strength; a
    signature token never appears in another user's reply.  Queries carry a
    topic token which the reply echoes half the time, giving the encoder
    something to condition on.
    """
    if num_users < 2:
        raise CorpusError("num_users must be >= 2")
    if not (0.5 < signature_strength < 1.0):
        raise CorpusError("signature_strength must be in (0.5, 1)")
    rng = np.random.default_rng(seed)

    topics = [f"topic{i}" for i in range(topic_count)]
    fillers = [f"q{i}" for i in range(query_fillers)]
    pool = [f"w{i}" for i in range(reply_pool)]
    signatures = {
        k: [f"sig{k}_{j}" for j in range(signature_size)]
        for k in range(num_users)
    }
    # user-specific unigram preference over the shared pool
    prefs = {}
    for k in range(num_users):
        w = rng.dirichlet(np.full(reply_pool, 0.5))
        prefs[k] = w

    triples = []
    for k in range(num_users):
        uid = f"user{k}"
        for _ in range(triples_per_user):
            topic = topics[rng.integers(topic_count)]
            q_len = int(rng.integers(2, 5))
            query = [topic] + [fillers[rng.integers(query_fillers)] for _ in range(q_len)]
            r_len = int(rng.integers(3, 7))
            reply = list(np.array(pool)[rng.choice(reply_pool, size=r_len, p=prefs[k])])
            if rng.random() < 0.5:
                reply[rng.integers(r_len)] = topic
            if rng.random() < signature_strength:
                sig = signatures[k][rng.integers(signature_size)]
                reply[rng.integers(r_len)] = sig
            triples.append(DialogueTriple(uid, query, reply))
    return triples
