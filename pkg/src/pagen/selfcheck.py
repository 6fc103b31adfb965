"""Build verification: finite-difference checks for every autodiff
primitive and one end-to-end loss, a Monte Carlo oracle for the closed-form
KL, and brute-force reimplementations of the evaluation metrics.

The brute-force oracles here deliberately share no code with the metric
implementations they check.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor, grad_check
from .objective import total_loss


# ---------------------------------------------------------------------------
# primitive gradient checks

def _param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def primitive_cases(seed=0):
    """(name, loss_fn, params) for every primitive op, float64 inputs."""
    rng = np.random.default_rng(seed)
    cases = []

    x = _param(rng, 3, 4)
    y = _param(rng, 3, 4)
    b = _param(rng, 4)
    w = _param(rng, 4, 5)
    cases.append(("add", lambda: ad.reduce_sum(ad.mul(ad.add(x, y), ad.add(x, y))),
                  {"x": x, "y": y}))
    cases.append(("add_bias", lambda: ad.reduce_sum(ad.tanh(ad.add(x, b))),
                  {"x": x, "b": b}))
    cases.append(("sub", lambda: ad.reduce_sum(ad.mul(ad.sub(x, y), ad.sub(x, y))),
                  {"x": x, "y": y}))
    cases.append(("mul", lambda: ad.reduce_sum(ad.mul(x, y)), {"x": x, "y": y}))
    cases.append(("matmul", lambda: ad.reduce_sum(ad.sigmoid(ad.matmul(x, w))),
                  {"x": x, "w": w}))
    cases.append(("sigmoid", lambda: ad.reduce_sum(ad.sigmoid(x)), {"x": x}))
    cases.append(("tanh", lambda: ad.reduce_sum(ad.tanh(x)), {"x": x}))
    cases.append(("exp", lambda: ad.reduce_sum(ad.exp(ad.scale(x, 0.3))), {"x": x}))

    pos = Tensor(np.abs(rng.standard_normal((3, 4))) + 0.5, requires_grad=True)
    cases.append(("log", lambda: ad.reduce_sum(ad.log(pos)), {"x": pos}))
    cases.append(("softmax", lambda: ad.reduce_sum(ad.mul(ad.softmax(x), y)),
                  {"x": x, "y": y}))
    cases.append(("log_softmax", lambda: ad.reduce_sum(ad.mul(ad.log_softmax(x), y)),
                  {"x": x, "y": y}))
    cases.append(("concat", lambda: ad.reduce_sum(ad.tanh(ad.concat([x, y], axis=1))),
                  {"x": x, "y": y}))
    cases.append(("slice", lambda: ad.reduce_sum(ad.mul(ad.slice_cols(x, 1, 3),
                                                        ad.slice_cols(y, 0, 2))),
                  {"x": x, "y": y}))
    cases.append(("reshape", lambda: ad.reduce_sum(ad.sigmoid(ad.reshape(x, (4, 3)))),
                  {"x": x}))

    col = _param(rng, 3, 1)
    cases.append(("tile_cols", lambda: ad.reduce_sum(ad.mul(ad.tile_cols(col, 4), y)),
                  {"col": col, "y": y}))
    cases.append(("reduce_sum_axis", lambda: ad.reduce_sum(ad.tanh(ad.reduce_sum(x, axis=1))),
                  {"x": x}))
    cases.append(("reduce_mean", lambda: ad.reduce_mean(ad.mul(x, x)), {"x": x}))
    cases.append(("reduce_mean_axis", lambda: ad.reduce_sum(ad.exp(ad.reduce_mean(x, axis=0))),
                  {"x": x}))

    idx = np.array([0, 2, 1])
    cases.append(("pick", lambda: ad.reduce_sum(ad.exp(ad.pick(x, idx))), {"x": x}))
    table = _param(rng, 5, 4)
    lookup = np.array([1, 4, 1])
    cases.append(("embedding", lambda: ad.reduce_sum(ad.mul(ad.embedding(table, lookup), y)),
                  {"table": table, "y": y}))
    # inputs away from the kink so finite differences are valid
    far = Tensor(rng.standard_normal((3, 4)) * 2 + np.sign(rng.standard_normal((3, 4))) * 1.0,
                 requires_grad=True)
    cases.append(("hinge_floor", lambda: ad.reduce_sum(ad.hinge_floor(far, 0.0)),
                  {"x": far}))
    cases.append(("scale", lambda: ad.reduce_sum(ad.scale(x, -1.7)), {"x": x}))
    return cases


def check_primitives(seed=0, h=1e-4, tol=1e-4):
    """Finite-difference check for every primitive; returns (ok, lines)."""
    lines = []
    ok = True
    for name, fn, params in primitive_cases(seed):
        report = grad_check(fn, params, h=h, tol=tol)
        worst = max(e.max_rel_error for e in report.entries)
        ok = ok and report.passed
        lines.append(f"{'ok' if report.passed else 'FAIL':4s} primitive {name}: "
                     f"max_rel_err={worst:.3e}")
    return ok, lines


def _toy_config(variant="PAGENERATOR"):
    return M.ModelConfig(variant=variant, vocab_size=30, num_users=3,
                         word_embed_dim=6, user_embed_dim=4, encoder_hidden=5,
                         decoder_hidden=8, z_dim=3, bow_hidden=7, fact_rank=3,
                         anneal_batches=10)


def check_end_to_end(seed=0, h=1e-4, tol=1e-4, max_coords=4, variant="PAGENERATOR",
                     use_attention=False):
    """FD check of the full loss on a 2-example batch at float64, sampling
    max_coords coordinates per parameter tensor."""
    config = _toy_config(variant)
    config.use_attention = use_attention
    params = M.init_params(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    user_idx = np.array([1, 2], dtype=np.int64)
    q_idx = np.array([[5, 7, 9], [6, 8, 0]], dtype=np.int64)
    q_len = np.array([3, 2])
    r_idx = np.array([[10, 11, 12, 13], [14, 15, 0, 0]], dtype=np.int64)
    r_len = np.array([4, 2])
    noise = rng.standard_normal((2, config.z_dim))
    batch = (user_idx, q_idx, q_len, r_idx, r_len)

    def loss_fn():
        loss, _ = total_loss(batch, params, config, noise=noise, batch_index=7,
                             dtype=np.float64)
        return loss

    return grad_check(loss_fn, params, h=h, tol=tol, max_coords=max_coords,
                      rng=np.random.default_rng(seed + 2))


# ---------------------------------------------------------------------------
# Monte Carlo oracle for the closed-form KL

def kl_closed_form(mu_a, lv_a, mu_b, lv_b):
    from .model import GaussianParams
    from .objective import gaussian_kl
    g_a = GaussianParams(mu=Tensor(mu_a), log_var=Tensor(lv_a))
    g_b = GaussianParams(mu=Tensor(mu_b), log_var=Tensor(lv_b))
    return float(gaussian_kl(g_a, g_b).data)


def kl_monte_carlo(mu_a, lv_a, mu_b, lv_b, samples=1_000_000, seed=0):
    """E_a[log N_a(x) - log N_b(x)] by direct sampling."""
    rng = np.random.default_rng(seed)
    std_a = np.exp(0.5 * lv_a)
    x = mu_a + std_a * rng.standard_normal((samples, len(mu_a)))
    log_a = -0.5 * (((x - mu_a) / std_a) ** 2 + lv_a + math.log(2 * math.pi)).sum(axis=1)
    std_b = np.exp(0.5 * lv_b)
    log_b = -0.5 * (((x - mu_b) / std_b) ** 2 + lv_b + math.log(2 * math.pi)).sum(axis=1)
    return float((log_a - log_b).mean())


def check_kl(pairs=20, dim=4, samples=1_000_000, rel_tol=0.01, seed=0):
    rng = np.random.default_rng(seed)
    lines, ok = [], True
    done = 0
    while done < pairs:
        mu_a = rng.uniform(-2, 2, dim)
        mu_b = rng.uniform(-2, 2, dim)
        lv_a = rng.uniform(-1, 1, dim)
        lv_b = rng.uniform(-1, 1, dim)
        exact = kl_closed_form(mu_a, lv_a, mu_b, lv_b)
        if exact < 0.5:  # keep the MC estimator's relative error meaningful
            continue
        mc = kl_monte_carlo(mu_a, lv_a, mu_b, lv_b, samples=samples, seed=int(rng.integers(2**31)))
        rel = abs(mc - exact) / exact
        passed = rel < rel_tol
        ok = ok and passed
        lines.append(f"{'ok' if passed else 'FAIL':4s} kl pair {done}: "
                     f"exact={exact:.4f} mc={mc:.4f} rel={rel:.4%}")
        done += 1
    return ok, lines


# ---------------------------------------------------------------------------
# brute-force metric oracles

def bleu1_oracle(candidate, reference):
    if not candidate:
        return 0.0
    ref = Counter(reference)
    matched = 0
    used = Counter()
    for tok in candidate:
        if used[tok] < ref.get(tok, 0):
            matched += 1
            used[tok] += 1
    precision = matched / len(candidate)
    if len(candidate) >= len(reference):
        bp = 1.0
    else:
        bp = math.exp(1.0 - len(reference) / len(candidate))
    return precision * bp


def distinct_n_oracle(responses, n):
    seen, total = [], 0
    for r in responses:
        for i in range(len(r)):
            gram = r[i:i + n]
            if len(gram) == n:
                total += 1
                if gram not in seen:
                    seen.append(gram)
    if total == 0:
        return None
    return len(seen) / total


def bigram_perplexity_oracle(background, user_sents, lam, tokens):
    """Recount everything from scratch and evaluate the interpolated
    bigram probability transition by transition."""
    vocab = {"</s>", "<oov>"}
    for s in background:
        vocab.update(s)
    v = len(vocab)

    def norm(t):
        return t if (t in vocab or t == "<s>") else "<oov>"

    def counts(sents):
        bi, uni = Counter(), Counter()
        for s in sents:
            seq = ["<s>"] + [norm(t) for t in s] + ["</s>"]
            for i in range(len(seq) - 1):
                bi[(seq[i], seq[i + 1])] += 1
                uni[seq[i]] += 1
        return bi, uni

    bg_bi, bg_uni = counts(background)
    u_bi, u_uni = counts(user_sents)
    seq = ["<s>"] + [norm(t) for t in tokens] + ["</s>"]
    total = 0.0
    for i in range(len(seq) - 1):
        a, b = seq[i], seq[i + 1]
        p_bg = (bg_bi[(a, b)] + 1) / (bg_uni[a] + v)
        if u_uni[a] > 0:
            p_u = u_bi[(a, b)] / u_uni[a]
        else:
            p_u = p_bg
        total += math.log(lam * p_u + (1 - lam) * p_bg)
    return math.exp(-total / (len(seq) - 1))


def urank_oracle(m_scores, s_scores):
    """Indicator from explicit pairwise comparisons."""
    rank_m = 0
    for s in m_scores[1:]:
        if s > m_scores[0]:
            rank_m += 1
    rank_s = 0
    for s in s_scores[1:]:
        if s > s_scores[0]:
            rank_s += 1
    return 1 if rank_m < rank_s else 0


def embedding_metrics_oracle(candidate, reference, vectors):
    cv = [vectors[t] for t in candidate if t in vectors]
    rv = [vectors[t] for t in reference if t in vectors]
    if not cv or not rv:
        return None

    def cos(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 0.0
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    def mean_vec(vs):
        return [sum(v[i] for v in vs) / len(vs) for i in range(len(vs[0]))]

    average = cos(mean_vec(cv), mean_vec(rv))

    def extrema(vs):
        out = []
        for i in range(len(vs[0])):
            best = vs[0][i]
            for v in vs[1:]:
                if abs(v[i]) > abs(best):
                    best = v[i]
            out.append(best)
        return out

    ext = cos(extrema(cv), extrema(rv))

    def directed(a, b):
        return sum(max(cos(x, y) for y in b) for x in a) / len(a)

    greedy = 0.5 * (directed(cv, rv) + directed(rv, cv))
    return average, ext, greedy


def run_all(seed=0, verbose=True):
    """Full self-check; returns True when everything passes."""
    from . import metrics as MX

    ok_all = True
    ok, lines = check_primitives(seed)
    ok_all &= ok
    if verbose:
        print("\n".join(lines))

    report = check_end_to_end(seed)
    ok_all &= report.passed
    if verbose:
        worst = max(e.max_rel_error for e in report.entries)
        print(f"{'ok' if report.passed else 'FAIL':4s} end-to-end loss gradients: "
              f"max_rel_err={worst:.3e}")
        if not report.passed:
            print("  failing parameters:", ", ".join(report.failures()))

    ok, lines = check_kl(pairs=5, samples=200_000, seed=seed)
    ok_all &= ok
    if verbose:
        print("\n".join(lines))

    rng = np.random.default_rng(seed)
    vocab = [f"t{i}" for i in range(20)]
    worst = 0.0
    for _ in range(50):
        cand = [vocab[i] for i in rng.integers(0, 20, rng.integers(1, 9))]
        ref = [vocab[i] for i in rng.integers(0, 20, rng.integers(1, 9))]
        worst = max(worst, abs(MX.bleu1(cand, ref) - bleu1_oracle(cand, ref)))
        resp = [[vocab[i] for i in rng.integers(0, 20, rng.integers(1, 9))]
                for _ in range(3)]
        for n in (1, 2):
            a, b = MX.distinct_n(resp, n), distinct_n_oracle(resp, n)
            if a is not None and b is not None:
                worst = max(worst, abs(a - b))
    passed = worst < 1e-9
    ok_all &= passed
    if verbose:
        print(f"{'ok' if passed else 'FAIL':4s} metric oracles (bleu1/distinct): "
              f"max_abs_err={worst:.2e}")
    return ok_all
