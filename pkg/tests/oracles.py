"""Brute-force reference implementations used only by the tests.

Nothing here imports from ``radial_attn``; each function re-derives its
answer from the defining formula with plain loops.
"""

import math


def ilog2_floor(x):
    e = 0
    while (1 << (e + 1)) <= x:
        e += 1
    return e


def radial_formula(i, j, k, l, s, sink):
    """The three-case radial mask rule, evaluated literally."""
    e = ilog2_floor(max(abs(i - j), 1))
    two_e = 2 ** e
    if two_e <= s and abs(k - l) + 1 <= s / two_e:
        return True
    if abs(i - j) % math.ceil(two_e / s) == 0 and k == l:
        return True
    return sink and j == 0


def radial_count(f, s, sink):
    total = 0
    for i in range(f):
        for j in range(f):
            for k in range(s):
                for l in range(s):
                    total += radial_formula(i, j, k, l, s, sink)
    return total


def radial_bits(f, s, sink):
    n = f * s
    return [
        [radial_formula(u // s, v // s, u % s, v % s, s, sink) for v in range(n)]
        for u in range(n)
    ]


def block_any(bits, B):
    n = len(bits)
    R = -(-n // B)
    out = [[False] * R for _ in range(R)]
    for u in range(n):
        for v in range(n):
            if bits[u][v]:
                out[u // B][v // B] = True
    return out


def naive_attention(Q, K, V, keep=None, logits=None):
    """Row-by-row softmax attention with explicit loops; ``keep[u][v]`` masks keys."""
    n = len(V)
    d = len(V[0])
    out = []
    for u in range(n):
        scores = []
        for v in range(n):
            if keep is not None and not keep[u][v]:
                continue
            if logits is not None:
                x = logits[u][v]
            else:
                x = sum(Q[u][c] * K[v][c] for c in range(d)) / math.sqrt(len(Q[0]))
            scores.append((v, x))
        top = max(x for _, x in scores)
        weights = [(v, math.exp(x - top)) for v, x in scores]
        z = math.fsum(w for _, w in weights)
        row = [0.0] * d
        for v, w in weights:
            for c in range(d):
                row[c] += w / z * V[v][c]
        out.append(row)
    return out


def boxed_bound(alpha, beta, s, c_rel=1.0):
    ea, eb = math.exp(-alpha), math.exp(-beta)
    first = 8 * math.exp(-beta * (s / 2 + 1)) / ((1 - ea) * (1 - eb))
    second = 4 * (1 + eb) / (1 - eb) * math.exp(-alpha * (s + 1)) / (1 - ea)
    return c_rel * (first + second)
