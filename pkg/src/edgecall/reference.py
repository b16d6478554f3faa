"""Naive nested-loop convolutions with multiply counters.

These are deliberately slow, pure-Python transcriptions of the index
formulas. They are the oracle the vectorised ops in :mod:`edgecall.conv`
are checked against, and the instrumented ground truth for the MAC
counts in :mod:`edgecall.cost`. Every multiply is counted, including the
ones that hit padding zeros.
"""
from __future__ import annotations

import numpy as np


class Counter:
    def __init__(self):
        self.mults = 0


def _rows(x):
    return [list(map(float, row)) for row in np.asarray(x, dtype=np.float64)]


def _padded(rows, left, right):
    c = len(rows[0])
    return [[0.0] * c for _ in range(left)] + rows + [[0.0] * c for _ in range(right)]


def full(x, weight, bias, stride=1, counter=None):
    """Y[t, j] = sum_{d, i} Xpad[t*stride + d, i] W[j, d, i] + B[j], pad D//2 both sides."""
    counter = counter or Counter()
    w = np.asarray(weight, dtype=np.float64)
    c_out, D, c_in = w.shape
    X = _rows(x)
    T = len(X)
    Xp = _padded(X, D // 2, D // 2)
    out = []
    for t in range(0, T, stride):
        row = []
        for j in range(c_out):
            s = float(bias[j])
            for d in range(D):
                for i in range(c_in):
                    s += Xp[t + d][i] * w[j, d, i]
                    counter.mults += 1
            row.append(s)
        out.append(row)
    return np.array(out)


def depthwise(x, weight, bias, dilation=1, counter=None):
    """Y[t, j] = sum_d Xpad[t + d*dilation, j] W[d, j] + B[j].

    Padding: ceil((m-1)/2)*dilation zeros on the left, floor((m-1)/2)*dilation
    on the right.
    """
    counter = counter or Counter()
    w = np.asarray(weight, dtype=np.float64)
    m, C = w.shape
    X = _rows(x)
    T = len(X)
    left = ((m - 1) - (m - 1) // 2) * dilation
    right = ((m - 1) // 2) * dilation
    Xp = _padded(X, left, right)
    out = []
    for t in range(T):
        row = []
        for j in range(C):
            s = float(bias[j])
            for d in range(m):
                s += Xp[t + d * dilation][j] * w[d, j]
                counter.mults += 1
            row.append(s)
        out.append(row)
    return np.array(out)


def pointwise(x, weight, bias, counter=None):
    counter = counter or Counter()
    w = np.asarray(weight, dtype=np.float64)
    c_out, c_in = w.shape
    out = []
    for xt in _rows(x):
        row = []
        for j in range(c_out):
            s = float(bias[j])
            for i in range(c_in):
                s += xt[i] * w[j, i]
                counter.mults += 1
            row.append(s)
        out.append(row)
    return np.array(out)


def fat_pointwise(x, weight, bias, counter=None):
    """Window-k convolution; k//2 zeros on the left and (k-1)//2 on the right."""
    counter = counter or Counter()
    w = np.asarray(weight, dtype=np.float64)
    c_out, k, c_in = w.shape
    X = _rows(x)
    Xp = _padded(X, k // 2, (k - 1) // 2)
    out = []
    for t in range(len(X)):
        row = []
        for j in range(c_out):
            s = float(bias[j])
            for d in range(k):
                for i in range(c_in):
                    s += Xp[t + d][i] * w[j, d, i]
                    counter.mults += 1
            row.append(s)
        out.append(row)
    return np.array(out)


def strided(x, weight, bias, counter=None):
    """Non-overlapping windows, depth == stride, no padding."""
    counter = counter or Counter()
    w = np.asarray(weight, dtype=np.float64)
    c_out, s, c_in = w.shape
    X = _rows(x)
    if len(X) % s:
        raise ValueError("length not divisible by stride")
    out = []
    for tc in range(len(X) // s):
        row = []
        for j in range(c_out):
            acc = float(bias[j])
            for d in range(s):
                for i in range(c_in):
                    acc += X[tc * s + d][i] * w[j, d, i]
                    counter.mults += 1
            row.append(acc)
        out.append(row)
    return np.array(out)


def transposed(x, weight, bias, counter=None):
    """out[t*s + d, j] = sum_i X[t, i] W[j, d, i] + B[j]."""
    counter = counter or Counter()
    w = np.asarray(weight, dtype=np.float64)
    c_out, s, c_in = w.shape
    X = _rows(x)
    out = [[0.0] * c_out for _ in range(len(X) * s)]
    for t, xt in enumerate(X):
        for d in range(s):
            for j in range(c_out):
                acc = float(bias[j])
                for i in range(c_in):
                    acc += xt[i] * w[j, d, i]
                    counter.mults += 1
                out[t * s + d][j] = acc
    return np.array(out)


def separable(x, dw_weight, dw_bias, pw_weight, pw_bias, counter=None):
    """Depthwise (dilation 1) then pointwise."""
    counter = counter or Counter()
    z = depthwise(x, dw_weight, dw_bias, 1, counter)
    return pointwise(z, pw_weight, pw_bias, counter)


def k_blueprint(x, pw_weight, pw_bias, dw_weight, dw_bias, counter=None):
    """Fat-pointwise of window k then depthwise with dilation k; k=1 is blueprint."""
    counter = counter or Counter()
    k = np.asarray(pw_weight).shape[1]
    z = fat_pointwise(x, pw_weight, pw_bias, counter)
    return depthwise(z, dw_weight, dw_bias, k, counter)
