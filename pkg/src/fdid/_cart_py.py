"""Pure-Python/numpy CART kernels.

Reference twin of the compiled ``_cart`` extension. Accumulations are kept in
the same sequential order as the C loops so both backends grow identical
trees; do not swap ``np.cumsum`` for ``np.sum`` here (pairwise summation
changes the rounding).
"""
import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def build_tree(X, Y, sample, max_depth, min_leaf, mtry, seed):
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    idx = np.array(sample, dtype=np.int64)
    n_s = idx.shape[0]
    p = X.shape[1]
    q = Y.shape[1]
    mtry = min(mtry, p)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(None)
        return len(feature) - 1

    new_node()
    perm = list(range(p))
    state = int(seed) & _MASK
    stack = [(0, n_s, 0, 0)]
    while stack:
        start, end, depth, node = stack.pop()
        nn = end - start
        seg = idx[start:end]
        Ys = Y[seg]
        total = np.cumsum(Ys, axis=0)[-1]
        value[node] = total / nn

        if (max_depth >= 0 and depth >= max_depth) or nn < 2 * min_leaf:
            continue
        if np.all(Ys == Ys[0]):
            continue

        parent = 0.0
        for k in range(q):
            parent = parent + total[k] * total[k] / nn

        for j in range(mtry):
            state, z = _splitmix64(state)
            r = j + z % (p - j)
            perm[j], perm[r] = perm[r], perm[j]

        best_feat, best_gain, best_thr = -1, 0.0, 0.0
        nl = np.arange(1, nn, dtype=np.float64)
        nr = nn - nl
        for j in range(mtry):
            f = perm[j]
            xs = X[seg, f]
            order = np.argsort(xs, kind="stable")
            xv = xs[order]
            if xv[0] == xv[-1]:
                continue
            csum = np.cumsum(Ys[order], axis=0)[:-1]
            valid = (nl >= min_leaf) & (nr >= min_leaf) & (xv[:-1] != xv[1:])
            if not valid.any():
                continue
            gain = np.zeros(nn - 1)
            for k in range(q):
                sl = csum[:, k]
                sr = total[k] - sl
                gain = gain + (sl * sl / nl + sr * sr / nr)
            cand = np.flatnonzero(valid)
            i = cand[np.argmax(gain[cand])]
            if best_feat < 0 or gain[i] > best_gain:
                best_gain = gain[i]
                best_feat = f
                thr = 0.5 * (xv[i] + xv[i + 1])
                if thr >= xv[i + 1]:
                    thr = xv[i]
                best_thr = thr

        if best_feat < 0 or best_gain - parent <= 1e-12 * abs(parent) + 1e-300:
            continue

        go_left = X[seg, best_feat] <= best_thr
        idx[start:end] = np.concatenate([seg[go_left], seg[~go_left]])
        n_left = int(go_left.sum())
        lid = new_node()
        rid = new_node()
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        stack.append((start + n_left, end, depth + 1, rid))
        stack.append((start, start + n_left, depth + 1, lid))

    return (np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.vstack(value).astype(np.float64))


def predict_tree(X, feature, threshold, left, right, value):
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        cur = node[rows]
        goes_left = X[rows, feature[cur]] <= threshold[cur]
        node[rows] = np.where(goes_left, left[cur], right[cur])
        active = feature[node] >= 0
    return value[node]
