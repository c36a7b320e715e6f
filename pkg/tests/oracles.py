"""Plain-python reference implementations used as test oracles."""

import math


def nt_xent_oracle(z1, z2, tau):
    z = [list(map(float, r)) for r in z1] + [list(map(float, r)) for r in z2]
    n = len(z)
    b = n // 2

    def cos(u, v):
        dot = sum(a * c for a, c in zip(u, v))
        return dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(c * c for c in v)))

    total = 0.0
    for i in range(n):
        pos = (i + b) % n
        denom = sum(math.exp(cos(z[i], z[k]) / tau) for k in range(n) if k != i)
        total += -math.log(math.exp(cos(z[i], z[pos]) / tau) / denom)
    return total / n


def ce_oracle(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        row = [float(v) for v in row]
        total += math.log(sum(math.exp(v) for v in row)) - row[int(y)]
    return total / len(labels)
