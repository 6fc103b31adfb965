"""Plain-numpy forward reimplementations used as independent oracles.

Nothing here touches the autodiff graph; every function works on raw
arrays pulled out of the parameter tensors, so agreement with the library
is evidence rather than tautology.
"""

import numpy as np

BOS, EOS = 2, 3


def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_step_np(x, h, c, W, b, hidden):
    z = np.concatenate([x, h], axis=1) @ W + b
    i = sigmoid_np(z[:, :hidden])
    f = sigmoid_np(z[:, hidden:2 * hidden])
    o = sigmoid_np(z[:, 2 * hidden:3 * hidden])
    g = np.tanh(z[:, 3 * hidden:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def log_softmax_np(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def kl_np(mu_a, lv_a, mu_b, lv_b):
    """Diagonal-Gaussian KL, reduced over the last axis."""
    term = lv_b - lv_a + (np.exp(lv_a) + (mu_a - mu_b) ** 2) / np.exp(lv_b) - 1.0
    return 0.5 * term.sum(axis=-1)


def decoder_logprob_np(pd, config, h0, c0, z, e_u, reply_idx, reply_lengths):
    """Teacher-forced log p(reply + EOS | ...) computed step by step.

    pd: name -> numpy array of parameter values.  h0/c0: initial decoder
    state arrays.  z / e_u may be None depending on the variant.
    Fact-bias variants are not supported here.
    """
    B, Tr = reply_idx.shape
    Hd = config.decoder_hidden
    h, c = h0.copy(), c0.copy()
    prev = np.full(B, BOS, dtype=np.int64)
    total = np.zeros(B, dtype=h0.dtype)
    for t in range(Tr + 1):
        parts = [pd["word_emb"][prev]]
        if z is not None:
            parts.append(z)
        if e_u is not None:
            parts.append(e_u)
        x = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
        h, c = lstm_step_np(x, h, c, pd["dec_W"], pd["dec_b"], Hd)
        logp = log_softmax_np(h @ pd["out_W"] + pd["out_b"])
        if t < Tr:
            target = np.where(t < reply_lengths, reply_idx[:, t], EOS).astype(np.int64)
        else:
            target = np.full(B, EOS, dtype=np.int64)
        mask = (t <= reply_lengths).astype(h.dtype)
        total += logp[np.arange(B), target] * mask
        prev = target
    return total


def bow_logprob_np(pd, z, h_q, e_u, reply_idx, reply_lengths):
    """Bag-of-words log-likelihood term computed with a manual MLP."""
    hid = np.tanh(np.concatenate([z, h_q, e_u], axis=1) @ pd["bow_W1"] + pd["bow_b1"])
    logp = log_softmax_np(hid @ pd["bow_W2"] + pd["bow_b2"])
    B, Tr = reply_idx.shape
    total = np.zeros(B, dtype=z.dtype)
    for t in range(Tr):
        mask = (t < reply_lengths).astype(z.dtype)
        total += logp[np.arange(B), reply_idx[:, t]] * mask
    return total
