"""Network components: embeddings, masked bi-directional LSTM encoder,
prior/posterior networks, decoder with optional attention, the five
baseline variants as configuration, and the binary checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, ContractError
from .corpus import PAD, BOS, EOS, UNSPECIFIED_USER

VARIANTS = ("S2SA", "FACT_BIAS", "SPEAKER", "VAE", "CVAE", "PAGENERATOR")
LATENT_VARIANTS = ("VAE", "CVAE", "PAGENERATOR")

CHECKPOINT_MAGIC = b"PAGN"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    variant: str = "PAGENERATOR"
    vocab_size: int = 20004
    num_users: int = 2
    word_embed_dim: int = 300
    user_embed_dim: int = 128
    encoder_hidden: int = 256
    decoder_hidden: int = 512
    z_dim: int = 128
    bow_hidden: int = 400
    fact_rank: int = 32
    decode_with_user: bool = True
    use_attention: bool = False
    use_r1: bool = True
    use_r2: bool = True
    gamma1: float = 0.1
    gamma2: float = 0.1
    anneal_batches: int = 100000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for f in ("vocab_size", "num_users", "word_embed_dim", "user_embed_dim",
                  "encoder_hidden", "decoder_hidden", "z_dim", "bow_hidden", "fact_rank"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.variant == "PAGENERATOR":
            if self.use_r1 and self.gamma1 <= 0:
                raise ValueError("gamma1 must be > 0")
            if self.use_r2 and self.gamma2 <= 0:
                raise ValueError("gamma2 must be > 0")

    @property
    def is_latent(self):
        return self.variant in LATENT_VARIANTS

    @property
    def decoder_uses_user(self):
        # CVAE takes the user only as prior knowledge; feeding the user
        # embedding to the decoder is what distinguishes the full model
        # (and SPEAKER, which has no latent channel).
        if self.variant == "SPEAKER":
            return True
        if self.variant == "PAGENERATOR":
            return self.decode_with_user
        return False

    def to_text(self):
        """Canonical key-sorted key=value block (checkpoint trailer)."""
        d = asdict(self)
        lines = []
        for k in sorted(d):
            v = d[k]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        fields = cls.__dataclass_fields__
        for line in text.strip().splitlines():
            if not line.strip():
                continue
            k, _, v = line.partition("=")
            if k not in fields:
                raise ValueError(f"unknown config key {k!r}")
            ftype = fields[k].type
            if ftype in ("bool", bool):
                kwargs[k] = v == "true"
            elif ftype in ("int", int):
                kwargs[k] = int(v)
            elif ftype in ("float", float):
                kwargs[k] = float(v)
            else:
                kwargs[k] = v
        return cls(**kwargs)

    def toy(self, **overrides):
        """Desk-scale profile; the full-scale sizes stay the defaults."""
        small = dict(word_embed_dim=32, user_embed_dim=16, encoder_hidden=32,
                     decoder_hidden=64, z_dim=16, bow_hidden=64, fact_rank=8)
        small.update(overrides)
        return replace(self, **small)


@dataclass
class GaussianParams:
    mu: Tensor
    log_var: Tensor


@dataclass
class EncoderOutput:
    final: Tensor            # (batch, 2*encoder_hidden)
    step_states: list        # per step (batch, 2*encoder_hidden), for attention
    mask: np.ndarray         # (batch, T) 0/1 validity


# ---------------------------------------------------------------------------
# parameters

def init_params(config, seed=0, dtype=np.float32):
    """Uniform(-0.08, 0.08) init for every trainable tensor."""
    rng = np.random.default_rng(seed)
    H, Hd = config.encoder_hidden, config.decoder_hidden
    we, ue, zd = config.word_embed_dim, config.user_embed_dim, config.z_dim
    V, U = config.vocab_size, config.num_users

    shapes = {
        "word_emb": (V, we),
        "enc_fwd_W": (we + H, 4 * H),
        "enc_fwd_b": (4 * H,),
        "enc_bwd_W": (we + H, 4 * H),
        "enc_bwd_b": (4 * H,),
        "dec_init_W": (2 * H, Hd),
        "dec_init_b": (Hd,),
        "out_W": (Hd, V),
        "out_b": (V,),
    }
    dec_in = we
    if config.is_latent:
        dec_in += zd
        shapes.update({
            "prior_W": (2 * H + ue, 2 * zd),
            "prior_b": (2 * zd,),
            "post_W": (4 * H, 2 * zd),
            "post_b": (2 * zd,),
            "bow_W1": (zd + 2 * H + ue, config.bow_hidden),
            "bow_b1": (config.bow_hidden,),
            "bow_W2": (config.bow_hidden, V),
            "bow_b2": (V,),
        })
    if config.decoder_uses_user:
        dec_in += ue
    shapes["dec_W"] = (dec_in + Hd, 4 * Hd)
    shapes["dec_b"] = (4 * Hd,)
    if config.is_latent or config.decoder_uses_user:
        shapes["user_emb"] = (U, ue)
    if config.variant == "FACT_BIAS":
        shapes["fact_factors"] = (U, config.fact_rank)
        shapes["fact_proj"] = (config.fact_rank, V)
    if config.use_attention:
        shapes["att_W"] = (Hd, 2 * H)
        shapes["att_comb_W"] = (Hd + 2 * H, Hd)
        shapes["att_comb_b"] = (Hd,)

    params = {}
    for name in sorted(shapes):
        data = rng.uniform(-0.08, 0.08, size=shapes[name]).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def cast_params(params, dtype):
    return {k: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad, name=k)
            for k, p in params.items()}


# ---------------------------------------------------------------------------
# recurrent cells

def lstm_cell(x, h, c, W, b, hidden):
    z = ad.add(ad.matmul(ad.concat([x, h], axis=1), W), b)
    i = ad.sigmoid(ad.slice_cols(z, 0, hidden))
    f = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
    o = ad.sigmoid(ad.slice_cols(z, 2 * hidden, 3 * hidden))
    g = ad.tanh(ad.slice_cols(z, 3 * hidden, 4 * hidden))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _masked(new, old, mask_full):
    keep = ad.constant(mask_full)
    drop = ad.constant(1.0 - mask_full)
    return ad.add(ad.mul(keep, new), ad.mul(drop, old))


def pad_batch(token_lists):
    """Index lists -> (padded (B, T) int array, lengths (B,))."""
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    T = int(lengths.max())
    out = np.full((len(token_lists), T), PAD, dtype=np.int64)
    for i, toks in enumerate(token_lists):
        out[i, :len(toks)] = toks
    return out, lengths


def encode_batch(idx, lengths, params, config, dtype=np.float32):
    """Masked bi-directional LSTM over a padded batch of token indices.

    The backward pass runs t = T-1 .. 0 with the same validity mask, so
    its state at step t summarizes tokens t..len-1 of each row and its
    final state is the full backward encoding.
    """
    B, T = idx.shape
    H = config.encoder_hidden
    if (lengths <= 0).any():
        raise ContractError("encode: empty input sequence")
    emb = [ad.embedding(params["word_emb"], idx[:, t]) for t in range(T)]
    masks = [np.repeat((t < lengths).astype(dtype)[:, None], H, axis=1) for t in range(T)]

    zeros = ad.constant(np.zeros((B, H), dtype=dtype))
    h, c = zeros, zeros
    fwd = []
    for t in range(T):
        h_new, c_new = lstm_cell(emb[t], h, c, params["enc_fwd_W"], params["enc_fwd_b"], H)
        h, c = _masked(h_new, h, masks[t]), _masked(c_new, c, masks[t])
        fwd.append(h)
    final_fwd = h

    h, c = zeros, zeros
    bwd = [None] * T
    for t in reversed(range(T)):
        h_new, c_new = lstm_cell(emb[t], h, c, params["enc_bwd_W"], params["enc_bwd_b"], H)
        h, c = _masked(h_new, h, masks[t]), _masked(c_new, c, masks[t])
        bwd[t] = h
    final_bwd = h

    steps = [ad.concat([fwd[t], bwd[t]], axis=1) for t in range(T)]
    valid = (np.arange(T)[None, :] < lengths[:, None]).astype(dtype)
    return EncoderOutput(final=ad.concat([final_fwd, final_bwd], axis=1),
                         step_states=steps, mask=valid)


def encode(tokens, params, config, dtype=np.float32):
    """Single-sequence convenience wrapper around encode_batch."""
    if not tokens:
        raise ContractError("encode: empty token list")
    idx, lengths = pad_batch([tokens])
    return encode_batch(idx, lengths, params, config, dtype=dtype)


# ---------------------------------------------------------------------------
# prior / posterior

def _split_gaussian(out, z_dim):
    return GaussianParams(mu=ad.slice_cols(out, 0, z_dim),
                          log_var=ad.slice_cols(out, z_dim, 2 * z_dim))


def prior_net(h_q, e_u, params, config):
    """Affine map on [h_q; e_u] -> (mu, log_var), each z_dim wide."""
    out = ad.add(ad.matmul(ad.concat([h_q, e_u], axis=1), params["prior_W"]), params["prior_b"])
    return _split_gaussian(out, config.z_dim)


def posterior_net(h_q, h_r, params, config):
    out = ad.add(ad.matmul(ad.concat([h_q, h_r], axis=1), params["post_W"]), params["post_b"])
    return _split_gaussian(out, config.z_dim)


def sample_z(g, noise):
    """Reparameterized sample z = mu + exp(0.5 * log_var) * noise."""
    eps = ad.constant(np.asarray(noise, dtype=g.mu.dtype))
    std = ad.exp(ad.scale(g.log_var, 0.5))
    return ad.add(g.mu, ad.mul(std, eps))


def prior_user_index(user_idx, config):
    """Which user-embedding row feeds the prior: VAE always the
    unspecified user, CVAE/PAGENERATOR the real one."""
    user_idx = np.asarray(user_idx)
    if config.variant == "VAE":
        return np.full_like(user_idx, UNSPECIFIED_USER)
    return user_idx


# ---------------------------------------------------------------------------
# decoder

def decoder_init_state(h_q, params, config, batch, dtype=np.float32):
    h0 = ad.tanh(ad.add(ad.matmul(h_q, params["dec_init_W"]), params["dec_init_b"]))
    c0 = ad.constant(np.zeros((batch, config.decoder_hidden), dtype=dtype))
    return h0, c0


def fact_bias_logits(user_idx, params):
    """Low-rank per-user output bias: factors[u] @ shared projection."""
    return ad.matmul(ad.embedding(params["fact_factors"], np.asarray(user_idx)),
                     params["fact_proj"])


def _attention_context(h_dec, enc, params, dtype):
    proj = ad.matmul(h_dec, params["att_W"])
    cols = []
    for t, s in enumerate(enc.step_states):
        score = ad.reduce_sum(ad.mul(proj, s), axis=1)
        cols.append(ad.reshape(score, (score.shape[0], 1)))
    scores = ad.concat(cols, axis=1)
    neg = ad.constant(((1.0 - enc.mask) * -1e9).astype(dtype))
    weights = ad.softmax(ad.add(scores, neg))
    width = enc.step_states[0].shape[1]
    ctx = None
    for t, s in enumerate(enc.step_states):
        w = ad.tile_cols(ad.slice_cols(weights, t, t + 1), width)
        term = ad.mul(w, s)
        ctx = term if ctx is None else ad.add(ctx, term)
    return ctx


def decode_logits(prev_idx, state, z, e_u, enc, params, config, dtype=np.float32):
    """One decoder step; returns (logits, new_state)."""
    h, c = state
    parts = [ad.embedding(params["word_emb"], np.asarray(prev_idx))]
    if config.is_latent:
        parts.append(z)
    if config.decoder_uses_user:
        parts.append(e_u)
    x = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
    h_new, c_new = lstm_cell(x, h, c, params["dec_W"], params["dec_b"], config.decoder_hidden)
    if config.use_attention:
        ctx = _attention_context(h_new, enc, params, dtype)
        combined = ad.tanh(ad.add(ad.matmul(ad.concat([h_new, ctx], axis=1),
                                            params["att_comb_W"]), params["att_comb_b"]))
    else:
        combined = h_new
    logits = ad.add(ad.matmul(combined, params["out_W"]), params["out_b"])
    return logits, (h_new, c_new)


def decode_step(prev_idx, state, z, e_u, enc, params, config, user_idx=None,
                dtype=np.float32):
    """One decoder step returning a probability distribution over the vocab."""
    logits, new_state = decode_logits(prev_idx, state, z, e_u, enc, params, config, dtype)
    if config.variant == "FACT_BIAS":
        if user_idx is None:
            raise ContractError("FACT_BIAS decode requires user_idx")
        logits = ad.add(logits, fact_bias_logits(user_idx, params))
    return ad.softmax(logits), new_state


def user_embedding(user_idx, params, config):
    user_idx = np.asarray(user_idx)
    if "user_emb" not in params:
        return None
    if user_idx.min(initial=0) < 0 or user_idx.max(initial=0) >= config.num_users:
        raise ContractError("unknown user index")
    return ad.embedding(params["user_emb"], user_idx)


def teacher_forced_log_probs(reply_idx, reply_lengths, state, z, e_u, enc, params,
                             config, user_idx=None, dtype=np.float32):
    """Per-example sum of log p(token) over the reply plus EOS, teacher forced.

    reply_idx: (B, Tr) padded, no BOS/EOS.  Returns a (B,) tensor of
    log-probabilities (non-positive).
    """
    B, Tr = reply_idx.shape
    prev = np.full(B, BOS, dtype=np.int64)
    total = None
    for t in range(Tr + 1):
        logits, state = decode_logits(prev, state, z, e_u, enc, params, config, dtype)
        if config.variant == "FACT_BIAS":
            logits = ad.add(logits, fact_bias_logits(user_idx, params))
        logp = ad.log_softmax(logits)
        if t < Tr:
            # rows past their length score EOS at position == length, else masked
            target = np.where(t < reply_lengths, reply_idx[:, t], EOS).astype(np.int64)
        else:
            target = np.full(B, EOS, dtype=np.int64)
        step_mask = (t <= reply_lengths).astype(dtype)
        tok = ad.mul(ad.pick(logp, target), ad.constant(step_mask))
        total = tok if total is None else ad.add(total, tok)
        prev = target
    return total


# ---------------------------------------------------------------------------
# checkpoint format

def save_checkpoint(path, params, config):
    """Binary layout: magic "PAGN", u32 version, u32 tensor count; per
    tensor u16 name length + UTF-8 name, u8 rank, u32 dims, float32
    little-endian row-major values; then the canonical config text."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(data.tobytes())
        f.write(config.to_text().encode("utf-8"))


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        off += 4 * n
        params[name] = Tensor(data, requires_grad=True, name=name)
    config = ModelConfig.from_text(blob[off:].decode("utf-8"))
    return params, config
