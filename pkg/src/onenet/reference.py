"""Slow, obviously-correct loop implementations used as test oracles.

Nothing here shares code with the vectorised kernels; inputs and outputs are
plain numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np


def conv1d_loops(x, w, b=None, stride=1, padding=0):
    B, C, L = x.shape
    O, _, k = w.shape
    xp = np.zeros((B, C, L + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + L] = x
    L_out = (L + 2 * padding - k) // stride + 1
    out = np.zeros((B, O, L_out))
    for bi in range(B):
        for o in range(O):
            for t in range(L_out):
                acc = 0.0 if b is None else float(b[o])
                for c in range(C):
                    for j in range(k):
                        acc += float(w[o, c, j]) * float(xp[bi, c, t * stride + j])
                out[bi, o, t] = acc
    return out


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + H, padding : padding + W] = x
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for bi in range(B):
        for o in range(O):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += float(w[o, c, i, j]) * float(xp[bi, c, y * stride + i, xx * stride + j])
                    out[bi, o, y, xx] = acc
    return out


def matmul_loops(a, b):
    n, m = a.shape
    _, p = b.shape
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            out[i, j] = sum(float(a[i, k]) * float(b[k, j]) for k in range(m))
    return out


def pixel_unshuffle_loops(x, s):
    B, C, H, W = x.shape
    out = np.zeros((B, C * s * s, H // s, W // s), dtype=x.dtype)
    for bi in range(B):
        for c in range(C):
            for y in range(H // s):
                for xx in range(W // s):
                    for dy in range(s):
                        for dx in range(s):
                            out[bi, c * s * s + dy * s + dx, y, xx] = x[bi, c, s * y + dy, s * xx + dx]
    return out


def unshuffle_index_bruteforce(C, H, W, s, layout="chw"):
    """Gather index found by pushing labelled positions through the 2D loop oracle."""
    pos = np.arange(C * H * W)
    if layout == "chw":
        labels = pos.reshape(1, C, H, W)
    else:
        labels = pos.reshape(1, H, W, C).transpose(0, 3, 1, 2)
    un = pixel_unshuffle_loops(labels, s)  # [1, C s^2, H/s, W/s]
    return un[0].transpose(1, 2, 0).reshape(-1)


def blockwise_gather_indices(H, W):
    """Per-channel spatial gather for scale 2, one 2x2 block at a time.

    Blocks are visited row by row; block ``(j, i)`` starts at ``t = 2j*W + 2i``
    and gathers ``t, t+1, t+W, t+W+1``.
    """
    idx = []
    for j in range(H // 2):
        for i in range(W // 2):
            t = 2 * j * W + 2 * i
            idx += [t, t + 1, t + W, t + W + 1]
    return np.asarray(idx)


def weighted_ce_loops(logits, target, weights):
    B, K = logits.shape[:2]
    num = den = 0.0
    for idx in np.ndindex(target.shape):
        bi, rest = idx[0], idx[1:]
        z = [float(logits[(bi, k) + rest]) for k in range(K)]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        t = int(target[idx])
        num += weights[t] * (lse - z[t])
        den += weights[t]
    return num / den


def segmentation_scores_loops(pred, target, K):
    """(mIoU, Dice, accuracy) by explicit per-class counting."""
    pred, target = np.asarray(pred).ravel(), np.asarray(target).ravel()
    ious, dices = [], []
    for c in range(K):
        tp = fp = fn = 0
        for p, t in zip(pred, target):
            if p == c and t == c:
                tp += 1
            elif p == c:
                fp += 1
            elif t == c:
                fn += 1
        if tp + fp + fn == 0:
            continue
        ious.append(tp / (tp + fp + fn))
        dices.append(2 * tp / (2 * tp + fp + fn))
    acc = sum(int(p == t) for p, t in zip(pred, target)) / len(pred)
    return sum(ious) / len(ious), sum(dices) / len(dices), acc
