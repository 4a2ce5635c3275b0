"""Slow, loop-based recomputations used as independent oracles."""

import math

import numpy as np


def ln_row(row, g, b, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((x - mu) ** 2 for x in row) / len(row)
    return np.array([(x - mu) / math.sqrt(var + eps) * g[i] + b[i] for i, x in enumerate(row)])


def encoder_layer(X, params, layer):
    lp = params.layers[layer]
    n, d = X.shape
    dh = d // params.heads
    Q, K, V = X @ lp.wq, X @ lp.wk, X @ lp.wv
    heads_out = np.zeros((n, d))
    for head in range(params.heads):
        sl = slice(head * dh, (head + 1) * dh)
        for i in range(n):
            logits = [float(np.dot(Q[i, sl], K[j, sl])) / math.sqrt(dh) for j in range(n)]
            m = max(logits)
            w = [math.exp(x - m) for x in logits]
            z = sum(w)
            heads_out[i, sl] = sum(w[j] / z * V[j, sl] for j in range(n))
    mh = heads_out @ lp.wo
    out = np.zeros_like(X)
    for i in range(n):
        o = ln_row(X[i] + mh[i], lp.ln1_g, lp.ln1_b)
        hid = np.array([max(0.0, float(o @ lp.w1[:, c] + lp.b1[c])) for c in range(lp.w1.shape[1])])
        out[i] = ln_row(o + hid @ lp.w2 + lp.b2, lp.ln2_g, lp.ln2_b)
    return out


def encode(X, params):
    h = np.asarray(X, float) @ params.w_in
    for n in range(len(params.layers)):
        h = encoder_layer(h, params, n)
    return h


def cos(u, v):
    nu, nv = math.sqrt(sum(x * x for x in u)), math.sqrt(sum(x * x for x in v))
    return 0.0 if nu == 0 or nv == 0 else sum(a * b for a, b in zip(u, v)) / (nu * nv)


def decoder_step(mw, prev, params):
    e = params["embed"][prev]
    d = len(e)
    q = [sum(e[i] * params["dec_wq"][i, j] for i in range(d)) for j in range(d)]
    logits = [sum(row[j] * q[j] for j in range(d)) / math.sqrt(d) for row in mw]
    m = max(logits)
    w = [math.exp(x - m) for x in logits]
    alpha = [x / sum(w) for x in w]
    h = [e[j] + sum(alpha[r] * mw[r][j] for r in range(len(mw))) for j in range(d)]
    V = params["dec_bo"].shape[0]
    z = [sum(h[j] * params["dec_wo"][j, v] for j in range(d)) + params["dec_bo"][v] for v in range(V)]
    m = max(z)
    ez = [math.exp(x - m) for x in z]
    return np.array([x / sum(ez) for x in ez])


def dis_word_rate(cand, omega, gts):
    best = None
    for gt in gts:
        denom = [w for w in set(omega) if w in set(gt)]
        if not denom:
            continue
        hit = [w for w in denom if w in set(cand)]
        rate = len(hit) / len(denom)
        best = rate if best is None else max(best, rate)
    return best
