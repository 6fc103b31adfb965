"""Response generation: prior z sampling at inference time, greedy
decoding as beam width 1, and beam search with a single z per request."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import ContractError, no_grad
from .corpus import BOS, EOS, UNSPECIFIED_USER


@dataclass
class Hypothesis:
    tokens: list = field(default_factory=list)
    log_prob: float = 0.0
    finished: bool = False

    def normalized(self):
        return self.log_prob / max(1, len(self.tokens) + 1)  # +1 counts EOS


@dataclass
class GenRequest:
    query: list                  # token indices
    user_index: int = UNSPECIFIED_USER
    beam_width: int = 10
    max_length: int = 30
    z_mode: str = "sample"       # "sample" | "mean"
    seed: int = 0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ContractError("beam width must be >= 1")
        if self.z_mode not in ("sample", "mean"):
            raise ContractError(f"unknown z mode {self.z_mode!r}")


def _tile_encoder(enc, k):
    final = ad.constant(np.repeat(enc.final.data, k, axis=0))
    steps = [ad.constant(np.repeat(s.data, k, axis=0)) for s in enc.step_states]
    return M.EncoderOutput(final=final, step_states=steps,
                           mask=np.repeat(enc.mask, k, axis=0))


def _draw_z(enc_final, user_index, params, config, z_mode, seed):
    """One z per request from the prior p(z | q, u)."""
    prior_idx = M.prior_user_index(np.array([user_index]), config)
    e_u = M.user_embedding(prior_idx, params, config)
    prior = M.prior_net(enc_final, e_u, params, config)
    mu = prior.mu.data[0]
    if z_mode == "mean":
        return mu.copy()
    std = np.exp(0.5 * prior.log_var.data[0])
    eps = np.random.default_rng(seed).standard_normal(config.z_dim).astype(mu.dtype)
    return mu + std * eps


def generate(request, params, config):
    """Beam search; returns hypotheses sorted by length-normalized score."""
    if not request.query:
        raise ContractError("empty query")
    with no_grad():
        enc = M.encode(request.query, params, config)
        z_vec = _draw_z(enc.final, request.user_index, params, config,
                        request.z_mode, request.seed) if config.is_latent else None
        beams = [Hypothesis()]
        finished = []
        h0, c0 = M.decoder_init_state(enc.final, params, config, 1)
        states = [(h0.data[0], c0.data[0])]
        for step in range(request.max_length):
            k = len(beams)
            enc_k = _tile_encoder(enc, k)
            prev = np.array([b.tokens[-1] if b.tokens else BOS for b in beams])
            h = ad.constant(np.stack([s[0] for s in states]))
            c = ad.constant(np.stack([s[1] for s in states]))
            z = ad.constant(np.repeat(z_vec[None, :], k, axis=0)) if z_vec is not None else None
            u_idx = np.full(k, request.user_index, dtype=np.int64)
            e_u = M.user_embedding(u_idx, params, config) if config.decoder_uses_user else None
            probs, (h_new, c_new) = M.decode_step(prev, (h, c), z, e_u, enc_k, params,
                                                  config, user_idx=u_idx)
            logp = np.log(np.maximum(probs.data, 1e-30))
            logp[:, [0, 1, 2]] = -np.inf  # never emit PAD/UNK/BOS
            if step == 0:
                logp[:, EOS] = -np.inf  # no empty replies
            cands = []
            for i, b in enumerate(beams):
                order = np.argsort(-logp[i])[: request.beam_width]
                for tok in order:
                    cands.append((b.log_prob + logp[i, tok], i, int(tok)))
            cands.sort(key=lambda x: (-x[0], x[1], x[2]))
            # top-W candidates; EOS retires a hypothesis, the rest carry on
            new_beams, new_states = [], []
            for score, i, tok in cands[: request.beam_width]:
                if tok == EOS:
                    finished.append(Hypothesis(tokens=list(beams[i].tokens),
                                               log_prob=score, finished=True))
                else:
                    new_beams.append(Hypothesis(tokens=beams[i].tokens + [tok],
                                                log_prob=score))
                    new_states.append((h_new.data[i].copy(), c_new.data[i].copy()))
            beams, states = new_beams, new_states
            if not beams or len(finished) >= request.beam_width:
                break
        for b in beams:  # hit max length
            b.finished = True
            finished.append(b)
        finished.sort(key=lambda h: -h.normalized())
        return finished[: request.beam_width]


def score_responses(query, replies, user_index, params, config, z_mode="sample",
                    seed=0):
    """Teacher-forced log-probability of each reply given (q, u) and one
    shared z drawn from the prior with the request seed.  Raw sums, no
    length normalization (the ranking metric depends on raw scores)."""
    if not replies or any(not r for r in replies):
        raise ContractError("replies must be nonempty")
    n = len(replies)
    with no_grad():
        enc = M.encode(query, params, config)
        enc_n = _tile_encoder(enc, n)
        z = None
        if config.is_latent:
            z_vec = _draw_z(enc.final, user_index, params, config, z_mode, seed)
            z = ad.constant(np.repeat(z_vec[None, :], n, axis=0))
        u_idx = np.full(n, user_index, dtype=np.int64)
        e_u = M.user_embedding(u_idx, params, config) if config.decoder_uses_user else None
        state = M.decoder_init_state(enc_n.final, params, config, n)
        r_idx, r_len = M.pad_batch(replies)
        lp = M.teacher_forced_log_probs(r_idx, r_len, state, z, e_u, enc_n, params,
                                        config, user_idx=u_idx)
        return lp.data.astype(np.float64)


def score_response(query, reply, user_index, params, config, z_mode="sample", seed=0):
    return float(score_responses(query, [reply], user_index, params, config,
                                 z_mode=z_mode, seed=seed)[0])
