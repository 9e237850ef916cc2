"""Literal scalar-loop transcriptions of every objective.

These are the independent oracles for the batched implementations in
:mod:`cnerlab.losses`: plain Python loops over plain floats, no tape, no
vectorization, no log-sum-exp tricks.  Keep them slow and obvious.
"""

from __future__ import annotations

import math

import numpy as np


def ref_cosine(u, v) -> float:
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for a, b in zip(u, v):
        dot += a * b
        nu += a * a
        nv += b * b
    if nu < 1e-24 or nv < 1e-24:
        return 0.0
    return min(1.0, max(-1.0, dot / math.sqrt(nu * nv)))


def ref_softmax(logits) -> list[float]:
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    total = 0.0
    for e in exps:
        total += e
    return [e / total for e in exps]


def ref_ce(probs, gold, mask) -> float:
    probs = np.asarray(probs)
    total = 0.0
    n_sentences = probs.shape[0]
    for b in range(n_sentences):
        sent = 0.0
        n_tokens = 0
        for i in range(probs.shape[1]):
            if not mask[b][i]:
                continue
            p = max(float(probs[b][i][gold[b][i]]), 1e-30)
            sent += -math.log(p)
            n_tokens += 1
        total += sent / n_tokens
    return total / n_sentences


def ref_lcl(h, labels, tau) -> float:
    h = np.asarray(h)
    m = h.shape[0]
    per_anchor = []
    for i in range(m):
        positives = [p for p in range(m) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denominator = 0.0
        for k in range(m):
            if k != i:
                denominator += math.exp(ref_cosine(h[i], h[k]) / tau)
        anchor = 0.0
        for p in positives:
            numerator = math.exp(ref_cosine(h[i], h[p]) / tau)
            anchor += -math.log(numerator / denominator)
        per_anchor.append(anchor / len(positives))
    if not per_anchor:
        return 0.0
    total = 0.0
    for value in per_anchor:
        total += value
    return total / len(per_anchor)


def ref_tcl(r, pairing, tau) -> float:
    r = np.asarray(r)
    n2 = r.shape[0]
    total = 0.0
    for i in range(n2):
        denominator = 0.0
        for k in range(n2):
            if k != i:
                denominator += math.exp(ref_cosine(r[i], r[k]) / tau)
        numerator = math.exp(ref_cosine(r[i], r[pairing[i]]) / tau)
        total += -math.log(numerator / denominator)
    return total / n2


def ref_kd(student_probs, teacher_probs, mask) -> float:
    student = np.asarray(student_probs)
    teacher = np.asarray(teacher_probs)
    total = 0.0
    n_sentences = student.shape[0]
    for b in range(n_sentences):
        sent = 0.0
        n_tokens = 0
        for i in range(student.shape[1]):
            if not mask[b][i]:
                continue
            mse = 0.0
            for c in range(student.shape[2]):
                diff = float(student[b][i][c]) - float(teacher[b][i][c])
                mse += diff * diff
            sent += mse / student.shape[2]
            n_tokens += 1
        total += sent / n_tokens
    return total / n_sentences


def ref_joint(l_ce, l_lcl, l_tcl, alpha, beta) -> float:
    return alpha * l_ce + beta * (l_lcl + l_tcl)


def ref_matmul(a, b):
    """Triple-loop matrix product for checking the tensor primitive."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out
