"""Pure numpy implementations of the compiled kernels.

Arithmetic is ordered exactly as in ``_kernels.pyx`` (sequential cumulative
sums, identical gain expressions) so both backends choose the same splits.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"

MODE_GINI = 0
MODE_NEWTON = 1

_MASK = (1 << 64) - 1


class _SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)


def _seq_sum(v: np.ndarray) -> float:
    return float(np.cumsum(v)[-1]) if v.size else 0.0


def build_tree(XT, order, a, b, c, mode, max_depth, min_leaf, min_child,
               max_features, lam, gamma, seed):
    """Grow one tree depth-first with exact greedy splits.

    Args:
        XT: (d, n) C-contiguous float64 matrix (features by rows).
        order: (d, n) int32, row indices sorted by (value, index) per feature.
        a: per-row weight; rows with ``a <= 0`` are excluded. Gini mode uses it
            as class weight, Newton mode as a row count.
        b: Gini mode: ``weight * label``; Newton mode: gradient.
        c: Newton mode: hessian used in the split gain (ignored for Gini).
        mode: 0 for weighted Gini, 1 for second-order gain.
        max_depth: negative for unbounded.
        min_leaf: minimum ``a``-mass per child.
        min_child: minimum hessian mass per child (Newton only).
        max_features: features sampled per node before stopping at the first
            valid split.
        lam, gamma: L2 leaf penalty and split penalty (Newton only).
        seed: splitmix64 state for feature sampling.

    Returns:
        (feature, threshold, left, right, leaf_of) where ``leaf_of[i]`` is the
        leaf reached by training row ``i`` (``-1`` for excluded rows).
    """
    X = XT.T
    n, d = X.shape
    active = np.flatnonzero(a > 0).astype(np.int32)
    node_buf = active.copy()
    sorted_buf = [order[f][a[order[f]] > 0].copy() for f in range(d)]
    rng = _SplitMix64(seed)

    feature: list[int] = [-1]
    threshold: list[float] = [0.0]
    left: list[int] = [-1]
    right: list[int] = [-1]
    leaf_of = np.full(n, -1, dtype=np.int32)
    stack = [(0, 0, active.size, 0)]

    while stack:
        node, s, e, depth = stack.pop()
        rows = node_buf[s:e]
        A = _seq_sum(a[rows])
        B = _seq_sum(b[rows])
        C = _seq_sum(c[rows])

        splittable = (e - s) >= 2 and (max_depth < 0 or depth < max_depth)
        if mode == MODE_GINI:
            splittable = splittable and 0.0 < B < A
            parent = 2.0 * B * (A - B) / A
        else:
            parent = B * B / (C + lam)

        found = False
        best_gain, best_f, best_thr = 0.0, -1, 0.0
        if splittable:
            perm = list(range(d))
            for j in range(d):
                if j >= max_features and found:
                    break
                r = j + rng.next() % (d - j)
                perm[j], perm[r] = perm[r], perm[j]
                f = perm[j]
                seg = sorted_buf[f][s:e]
                aL = np.cumsum(a[seg])[:-1]
                bL = np.cumsum(b[seg])[:-1]
                cL = np.cumsum(c[seg])[:-1]
                v = X[seg, f]
                vn = v[1:]
                v = v[:-1]
                aR = A - aL
                ok = (vn > v) & ~(aL < min_leaf) & ~(aR < min_leaf)
                bR = B - bL
                cR = C - cL
                with np.errstate(divide="ignore", invalid="ignore"):
                    if mode == MODE_GINI:
                        gain = parent - 2.0 * bL * (aL - bL) / aL - 2.0 * bR * (aR - bR) / aR
                    else:
                        ok &= ~(cL < min_child) & ~(cR < min_child)
                        gain = 0.5 * (bL * bL / (cL + lam) + bR * bR / (cR + lam) - parent) - gamma
                cand = np.flatnonzero(ok)
                if cand.size == 0:
                    continue
                i = int(cand[np.argmax(gain[cand])])
                g = float(gain[i])
                if (not found) or g > best_gain or (g == best_gain and f < best_f):
                    thr = 0.5 * (v[i] + vn[i])
                    if not (thr < vn[i]):
                        thr = v[i]
                    found = True
                    best_gain, best_f, best_thr = g, f, float(thr)
            if mode == MODE_NEWTON and not (best_gain > 0.0):
                found = False

        if not found:
            leaf_of[rows] = node
            continue

        goes_left = np.zeros(n, dtype=bool)
        goes_left[rows] = X[rows, best_f] <= best_thr
        nl = int(goes_left[rows].sum())
        node_buf[s:e] = np.concatenate([rows[goes_left[rows]], rows[~goes_left[rows]]])
        for f in range(d):
            seg = sorted_buf[f][s:e]
            sorted_buf[f][s:e] = np.concatenate([seg[goes_left[seg]], seg[~goes_left[seg]]])

        lc = len(feature)
        feature[node], threshold[node] = best_f, best_thr
        left[node], right[node] = lc, lc + 1
        feature += [-1, -1]
        threshold += [0.0, 0.0]
        left += [-1, -1]
        right += [-1, -1]
        stack.append((lc + 1, s + nl, e, depth + 1))
        stack.append((lc, s, s + nl, depth + 1))

    return (np.asarray(feature, dtype=np.int32), np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int32), np.asarray(right, dtype=np.int32), leaf_of)


def ensemble_apply(X, feature, threshold, left, right, value, offsets, out, vote):
    n = X.shape[0]
    rows = np.arange(n)
    for t in range(len(offsets) - 1):
        base = int(offsets[t])
        node = np.zeros(n, dtype=np.int64)
        internal = feature[base + node] >= 0
        while internal.any():
            idx = rows[internal]
            nd = node[idx] + base
            go_left = X[idx, feature[nd]] <= threshold[nd]
            node[idx] = np.where(go_left, left[nd], right[nd])
            internal = feature[base + node] >= 0
        leaf = value[base + node]
        out += (leaf >= 0.5).astype(np.float64) if vote else leaf
    return out


def pegasos(X, y, perm, lam, avg_start):
    n, d = X.shape
    w = np.zeros(d)
    bias = 0.0
    avg = np.zeros(d)
    avg_b = 0.0
    t = n_avg = 0
    for ep in range(perm.shape[0]):
        for i in perm[ep]:
            t += 1
            yi = y[i]
            margin = yi * (bias + float(X[i] @ w))
            eta = 1.0 / (lam * t)
            shrink = 1.0 - 1.0 / t
            w *= shrink
            bias *= shrink
            if margin < 1.0:
                w += eta * yi * X[i]
                bias += eta * yi
            if t > avg_start:
                n_avg += 1
                frac = 1.0 / n_avg
                avg += (w - avg) * frac
                avg_b += (bias - avg_b) * frac
    return avg, float(avg_b)
