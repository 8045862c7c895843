"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops or numpy from the
textbook definitions, deliberately avoiding the package's code paths.
"""

import math

import numpy as np
import torch


def naive_matmul(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_dft(x):
    """Unnormalised DFT bins 0..P/2 of a real vector, O(P^2)."""
    x = np.asarray(x, float)
    p = len(x)
    out = np.zeros(p // 2 + 1, dtype=complex)
    for k in range(p // 2 + 1):
        s = 0j
        for n in range(p):
            s += x[n] * complex(math.cos(2 * math.pi * k * n / p), -math.sin(2 * math.pi * k * n / p))
        out[k] = s
    return out


def softmax_rows(x):
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape[:-1]):
        row = x[idx]
        e = np.array([math.exp(v - max(row)) for v in row])
        out[idx] = e / e.sum()
    return out


def loop_attention(q, k, v, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Per-head explicit-loop multi-head attention on 2-D inputs (n, d).

    Weights follow the torch Linear convention y = x W^T + b.
    Returns (out (n_q, d), weights (H, n_q, n_k)).
    """
    q, k, v = (np.asarray(t, float) for t in (q, k, v))
    d = q.shape[1]
    dh = d // heads
    Q = q @ wq.T + bq
    K = k @ wk.T + bk
    V = v @ wv.T + bv
    n_q, n_k = len(q), len(k)
    concat = np.zeros((n_q, d))
    weights = np.zeros((heads, n_q, n_k))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(n_q):
            scores = [sum(Q[i, sl][t] * K[j, sl][t] for t in range(dh)) / math.sqrt(dh) for j in range(n_k)]
            w = softmax_rows(np.array(scores))
            weights[h, i] = w
            for j in range(n_k):
                concat[i, sl] += w[j] * V[j, sl]
    return concat @ wo.T + bo, weights


def naive_conv1d(x, w, b, stride, padding):
    """x: (C_in, L); w: (C_out, C_in, K). Cross-correlation with zero padding."""
    x = np.asarray(x, float)
    c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.zeros((c_in, length + 2 * padding))
    xp[:, padding:padding + length] = x
    n_out = (length + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, n_out))
    for o in range(c_out):
        for t in range(n_out):
            s = b[o] if b is not None else 0.0
            for c in range(c_in):
                for j in range(k):
                    s += w[o, c, j] * xp[c, t * stride + j]
            out[o, t] = s
    return out


def gelu_exact(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def smooth_l1_scalar(d, beta):
    d = abs(d)
    return 0.5 * d * d if d < beta else beta * d - 0.5 * beta * beta


def gram_offdiag_loss(aff, lam):
    """Loop form of the specialisation penalty over (N, Q, C) affinities."""
    aff = np.asarray(aff, float)
    n, q, c = aff.shape
    total = 0.0
    for b in range(n):
        for i in range(q):
            for j in range(q):
                if i != j:
                    g = sum(aff[b, i, t] * aff[b, j, t] for t in range(c))
                    total += g * g
    return lam * total / (n * q * (q - 1)) if q > 1 else 0.0


def tone_amplitude(y, freq, rate, trim=0):
    """Lock-in estimate of the amplitude of a sinusoid at ``freq`` in ``y``.

    Uses a whole number of periods after trimming ``trim`` samples at each end.
    """
    y = np.asarray(y, float)
    if trim:
        y = y[trim:len(y) - trim]
    period = rate / freq
    n = int(math.floor(len(y) / period) * period) if period == int(period) else len(y)
    y = y[:n]
    t = np.arange(n) / rate
    return 2 * abs(np.mean(y * np.exp(-2j * np.pi * freq * t)))


def central_difference(fn, tensor, index, h=1e-5):
    """(f(x + h e_i) - f(x - h e_i)) / 2h, restoring the entry afterwards."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + h
        up = float(fn())
        tensor[index] = orig - h
        down = float(fn())
        tensor[index] = orig
    return (up - down) / (2 * h)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def confusion_by_hand(y_true, y_pred, k):
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    return np.array(cm)


def periodogram_peak(x, rate):
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / rate)
    return freqs[int(np.argmax(spec))], freqs, spec
