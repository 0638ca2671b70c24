"""Random forest classifier for grasp success.

Standard construction: per tree, a bootstrap of the training set and a
fresh uniform feature subset of size ~sqrt(d) at every node, splits
chosen by Gini impurity over midpoint thresholds between distinct
feature values, grown until pure or below the minimum leaf size.  The
forest scores a candidate by the fraction of trees voting success.

Everything random is drawn outside the build kernels from
``np.random.default_rng([seed, tree_index])``, and split selection
breaks ties by (impurity, feature index, threshold), so models are
bit-identical across runs, across the numba and numpy kernels, and
across serial or thread-parallel training.  That also means the
bootstrap composition of any stored model can be reproduced from its
seed alone, which is how out-of-bag scoring works without persisting
masks.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .accel import HAS_NUMBA, njit

FOREST_FORMAT_VERSION = 1


@dataclass
class ForestModel:
    """Flattened forest: node arrays concatenated over trees in preorder;
    ``tree_offsets[t]:tree_offsets[t+1]`` delimits tree t.  Internal
    nodes have left/right >= 0 (absolute indices); leaves have
    left == -1 and a class in ``klass``."""
    feature: np.ndarray       # int32
    threshold: np.ndarray     # float64
    left: np.ndarray          # int32
    right: np.ndarray         # int32
    klass: np.ndarray         # uint8
    tree_offsets: np.ndarray  # int64, n_trees + 1
    feature_count: int
    n_samples: int
    seed: int
    min_leaf: int
    version: int = FOREST_FORMAT_VERSION

    @property
    def n_trees(self):
        return len(self.tree_offsets) - 1


def _subset_size(d):
    return max(1, int(np.sqrt(d)))


def _tree_rng_draws(seed, tree_idx, n, d, min_leaf):
    """All randomness one tree consumes: bootstrap sample indices and a
    per-node feature-subset table (row i serves the i-th node created,
    in preorder)."""
    rng = np.random.default_rng([seed, tree_idx])
    boot = rng.integers(0, n, size=n, dtype=np.int64)
    max_nodes = 2 * n + 1
    table = rng.integers(0, d, size=(max_nodes, _subset_size(d)),
                         dtype=np.int64)
    return boot, table


@njit(cache=True, nogil=True)
def _sort_pairs(v, lab, lo, hi):
    """In-place quicksort of v[lo:hi] carrying lab along; smaller
    partition recursed first via an explicit stack so depth stays
    logarithmic, insertion sort below 16 elements."""
    stack_l = np.empty(64, dtype=np.int64)
    stack_h = np.empty(64, dtype=np.int64)
    sp = 0
    stack_l[0] = lo
    stack_h[0] = hi
    sp = 1
    while sp > 0:
        sp -= 1
        l = stack_l[sp]
        h = stack_h[sp]
        while h - l > 16:
            mid = (l + h) // 2
            pivot = v[mid]
            i = l
            j = h - 1
            while True:
                while v[i] < pivot:
                    i += 1
                while v[j] > pivot:
                    j -= 1
                if i >= j:
                    break
                tv = v[i]
                v[i] = v[j]
                v[j] = tv
                tl = lab[i]
                lab[i] = lab[j]
                lab[j] = tl
                i += 1
                j -= 1
            # [l, j+1) and [j+1, h): iterate the smaller side first
            if j + 1 - l < h - (j + 1):
                stack_l[sp] = j + 1
                stack_h[sp] = h
                sp += 1
                h = j + 1
            else:
                stack_l[sp] = l
                stack_h[sp] = j + 1
                sp += 1
                l = j + 1
        for i in range(l + 1, h):
            tv = v[i]
            tl = lab[i]
            j = i - 1
            while j >= l and v[j] > tv:
                v[j + 1] = v[j]
                lab[j + 1] = lab[j]
                j -= 1
            v[j + 1] = tv
            lab[j + 1] = tl


@njit(cache=True, nogil=True)
def _build_tree_nb(XT, y, boot, table, min_leaf, feature, threshold,
                   left, right, klass):
    n = boot.shape[0]
    samp = boot.copy()
    vals = np.empty(n)  # XT is (d, n): feature rows are contiguous
    labs = np.empty(n, dtype=np.uint8)
    # DFS stack: sample range [lo, hi), parent node id, left-child flag
    stack_lo = np.empty(2 * n + 2, dtype=np.int64)
    stack_hi = np.empty(2 * n + 2, dtype=np.int64)
    stack_parent = np.empty(2 * n + 2, dtype=np.int64)
    stack_isleft = np.empty(2 * n + 2, dtype=np.int64)
    sp = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_parent[0] = -1
    stack_isleft[0] = 0
    sp = 1
    count = 0
    while sp > 0:
        sp -= 1
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        parent = stack_parent[sp]
        isleft = stack_isleft[sp]
        node = count
        count += 1
        if parent >= 0:
            if isleft:
                left[parent] = node
            else:
                right[parent] = node

        size = hi - lo
        c1 = 0
        for i in range(lo, hi):
            c1 += y[samp[i]]
        c0 = size - c1

        leaf_class = np.uint8(1) if 2 * c1 > size else np.uint8(0)
        if c0 == 0 or c1 == 0 or size < 2 * min_leaf:
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            klass[node] = leaf_class
            continue

        best_g = np.inf
        best_f = -1
        best_t = 0.0
        row = table[node]
        for fi in range(row.shape[0]):
            f = row[fi]
            for i in range(size):
                s = samp[lo + i]
                vals[i] = XT[f, s]
                labs[i] = y[s]
            _sort_pairs(vals, labs, 0, size)
            nl1 = 0
            for i in range(size - 1):
                a = vals[i]
                nl1 += labs[i]
                bcut = vals[i + 1]
                if a == bcut:
                    continue
                nl = i + 1
                nr = size - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                nl0 = nl - nl1
                nr1 = c1 - nl1
                nr0 = c0 - nl0
                g = (nl - (nl0 * nl0 + nl1 * nl1) / nl) + \
                    (nr - (nr0 * nr0 + nr1 * nr1) / nr)
                t = (a + bcut) * 0.5
                if g < best_g or (g == best_g and
                                  (f < best_f or (f == best_f
                                                  and t < best_t))):
                    best_g = g
                    best_f = f
                    best_t = t
        if best_f < 0:
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            klass[node] = leaf_class
            continue

        # partition samples: <= threshold to the left
        i = lo
        j = hi - 1
        while i <= j:
            if XT[best_f, samp[i]] <= best_t:
                i += 1
            else:
                tmp = samp[i]
                samp[i] = samp[j]
                samp[j] = tmp
                j -= 1
        mid = i
        feature[node] = best_f
        threshold[node] = best_t
        # push right first so the left child is created next (preorder)
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        stack_parent[sp] = node
        stack_isleft[sp] = 0
        sp += 1
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        stack_parent[sp] = node
        stack_isleft[sp] = 1
        sp += 1
    return count


def _build_tree_np(XT, y, boot, table, min_leaf, feature, threshold,
                   left, right, klass):
    """Vectorised twin of _build_tree_nb; identical arithmetic and tie
    handling so the two paths grow bit-identical trees."""
    n = len(boot)
    samp = boot.copy()
    stack = [(0, n, -1, 0)]
    count = 0
    while stack:
        lo, hi, parent, isleft = stack.pop()
        node = count
        count += 1
        if parent >= 0:
            (left if isleft else right)[parent] = node
        ys = y[samp[lo:hi]].astype(np.int64)
        size = hi - lo
        c1 = int(ys.sum())
        c0 = size - c1
        leaf_class = 1 if 2 * c1 > size else 0
        if c0 == 0 or c1 == 0 or size < 2 * min_leaf:
            feature[node] = -1
            left[node] = -1
            right[node] = -1
            klass[node] = leaf_class
            continue

        best = (np.inf, -1, 0.0)
        for f in table[node]:
            vals = XT[f, samp[lo:hi]]
            order = np.argsort(vals)
            sv = vals[order]
            sy = ys[order]
            cum1 = np.cumsum(sy)
            i = np.nonzero(sv[:-1] != sv[1:])[0]
            if len(i) == 0:
                continue
            nl = (i + 1).astype(np.float64)
            nr = size - nl
            okm = (nl >= min_leaf) & (nr >= min_leaf)
            if not okm.any():
                continue
            i = i[okm]
            nl = nl[okm]
            nr = nr[okm]
            nl1 = cum1[i].astype(np.float64)
            nl0 = nl - nl1
            nr1 = c1 - nl1
            nr0 = c0 - nl0
            g = (nl - (nl0 * nl0 + nl1 * nl1) / nl) + \
                (nr - (nr0 * nr0 + nr1 * nr1) / nr)
            t = (sv[i] + sv[i + 1]) * 0.5
            for k in range(len(g)):
                cand = (g[k], f, t[k])
                bg, bf, bt = best
                if cand[0] < bg or (cand[0] == bg and
                                    (f < bf or (f == bf and cand[2] < bt))):
                    best = cand
        bg, bf, bt = best
        if bf < 0:
            feature[node] = -1
            left[node] = -1
            right[node] = -1
            klass[node] = leaf_class
            continue
        seg = samp[lo:hi]
        go = XT[bf, seg] <= bt
        samp[lo:hi] = np.concatenate([seg[go], seg[~go]])
        mid = lo + int(go.sum())
        feature[node] = bf
        threshold[node] = bt
        stack.append((mid, hi, node, 0))
        stack.append((lo, mid, node, 1))
    return count


def _train_one_tree(XT, y, seed, tree_idx, min_leaf):
    d, n = XT.shape
    boot, table = _tree_rng_draws(seed, tree_idx, n, d, min_leaf)
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    klass = np.zeros(max_nodes, dtype=np.uint8)
    build = _build_tree_nb if HAS_NUMBA else _build_tree_np
    cnt = build(XT, y, boot, table, min_leaf, feature, threshold, left,
                right, klass)
    return (feature[:cnt].copy(), threshold[:cnt].copy(),
            left[:cnt].copy(), right[:cnt].copy(), klass[:cnt].copy())


def train_forest(X, y, n_trees=100, min_leaf=2, seed=0, n_jobs=1):
    """Train a forest on features X (n, d) and binary labels y.

    ``n_jobs`` > 1 trains trees in a thread pool; tree content does not
    depend on scheduling, only on (seed, tree index).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.uint8)
    n, d = X.shape
    if n < 1:
        raise ValueError("empty training set")
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("labels must be 0 or 1")

    XT = np.ascontiguousarray(X.T)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(
                lambda t: _train_one_tree(XT, y, seed, t, min_leaf),
                range(n_trees)))
    else:
        trees = [_train_one_tree(XT, y, seed, t, min_leaf)
                 for t in range(n_trees)]

    offsets = np.zeros(n_trees + 1, dtype=np.int64)
    for t, tr in enumerate(trees):
        offsets[t + 1] = offsets[t] + len(tr[0])
    total = int(offsets[-1])
    feature = np.empty(total, dtype=np.int32)
    threshold = np.empty(total)
    left = np.full(total, -1, dtype=np.int32)
    right = np.full(total, -1, dtype=np.int32)
    klass = np.empty(total, dtype=np.uint8)
    for t, (f, th, le, ri, kl) in enumerate(trees):
        a, b = offsets[t], offsets[t + 1]
        feature[a:b] = f
        threshold[a:b] = th
        # rebase child ids onto the concatenated arrays
        le = le.copy()
        ri = ri.copy()
        le[le >= 0] += a
        ri[ri >= 0] += a
        left[a:b] = le
        right[a:b] = ri
        klass[a:b] = kl
    return ForestModel(feature, threshold, left, right, klass, offsets,
                       feature_count=d, n_samples=n, seed=seed,
                       min_leaf=min_leaf)


@njit(cache=True, nogil=True)
def _votes_nb(feature, threshold, left, right, klass, offsets, X, out):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        s = 0
        for t in range(n_trees):
            node = offsets[t]
            while left[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            s += klass[node]
        out[i] = s / n_trees


def _votes_np(feature, threshold, left, right, klass, offsets, X, out):
    n = X.shape[0]
    n_trees = len(offsets) - 1
    votes = np.zeros(n, dtype=np.int64)
    idx = np.arange(n)
    for t in range(n_trees):
        node = np.full(n, offsets[t], dtype=np.int64)
        active = left[node] >= 0
        while active.any():
            f = feature[node[active]]
            thr = threshold[node[active]]
            go = X[idx[active], f] <= thr
            node[active] = np.where(go, left[node[active]],
                                    right[node[active]])
            active = left[node] >= 0
        votes += klass[node]
    out[:] = votes / n_trees


def predict_scores(model: ForestModel, X):
    """Success score per row: fraction of trees voting class 1."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ValueError(
            f"expected (n, {model.feature_count}) features, got {X.shape}")
    out = np.empty(X.shape[0])
    fn = _votes_nb if HAS_NUMBA else _votes_np
    fn(model.feature, model.threshold, model.left, model.right,
       model.klass, model.tree_offsets, X, out)
    return out


def oob_accuracy(model: ForestModel, X, y):
    """Out-of-bag accuracy on the training set.

    Bootstrap membership is regenerated from the model's seed.  Each
    sample is predicted by majority vote of the trees that did not see
    it (ties count as class 0); samples in every tree's bag are skipped.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    n, d = X.shape
    if n != model.n_samples:
        raise ValueError("data size does not match the trained model")
    votes1 = np.zeros(n, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    out = np.empty(n)
    for t in range(model.n_trees):
        boot, _ = _tree_rng_draws(model.seed, t, n, d, model.min_leaf)
        oob = np.bincount(boot, minlength=n) == 0
        if not oob.any():
            continue
        sub = ForestModel(model.feature, model.threshold, model.left,
                          model.right, model.klass,
                          model.tree_offsets[t:t + 2],
                          model.feature_count, model.n_samples,
                          model.seed, model.min_leaf)
        scores = predict_scores(sub, X[oob])
        votes1[oob] += (scores > 0.5).astype(np.int64)
        counts[oob] += 1
    usable = counts > 0
    pred = np.zeros(n, dtype=np.int64)
    pred[usable] = (2 * votes1[usable] > counts[usable]).astype(np.int64)
    if not usable.any():
        return float("nan")
    return float((pred[usable] == y[usable]).mean())


def forest_to_bytes(model: ForestModel) -> bytes:
    """Serialize the forest block: header, then per tree a node count
    and preorder nodes (internal: tag 0, u32 feature, f64 threshold,
    u32 left, u32 right; leaf: tag 1, u8 class)."""
    out = bytearray()
    out += struct.pack("<HIIqqH", model.version, model.n_trees,
                       model.feature_count, model.n_samples, model.seed,
                       model.min_leaf)
    for t in range(model.n_trees):
        a, b = model.tree_offsets[t], model.tree_offsets[t + 1]
        out += struct.pack("<I", b - a)
        for i in range(a, b):
            if model.left[i] >= 0:
                out += struct.pack("<BIdII", 0, model.feature[i],
                                   model.threshold[i],
                                   model.left[i] - a, model.right[i] - a)
            else:
                out += struct.pack("<BB", 1, model.klass[i])
    return bytes(out)


def forest_from_bytes(data: bytes) -> ForestModel:
    version, n_trees, d, n_samples, seed, min_leaf = struct.unpack_from(
        "<HIIqqH", data, 0)
    if version != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {version}")
    pos = struct.calcsize("<HIIqqH")
    feats, thrs, lefts, rights, klasses = [], [], [], [], []
    offsets = [0]
    for _ in range(n_trees):
        (cnt,) = struct.unpack_from("<I", data, pos)
        pos += 4
        base = offsets[-1]
        for _ in range(cnt):
            tag = data[pos]
            pos += 1
            if tag == 0:
                f, th, le, ri = struct.unpack_from("<IdII", data, pos)
                pos += struct.calcsize("<IdII")
                feats.append(f)
                thrs.append(th)
                lefts.append(le + base)
                rights.append(ri + base)
                klasses.append(0)
            elif tag == 1:
                feats.append(-1)
                thrs.append(0.0)
                lefts.append(-1)
                rights.append(-1)
                klasses.append(data[pos])
                pos += 1
            else:
                raise ValueError(f"bad node tag {tag} at byte {pos - 1}")
        offsets.append(base + cnt)
    return ForestModel(
        np.array(feats, dtype=np.int32), np.array(thrs),
        np.array(lefts, dtype=np.int32), np.array(rights, dtype=np.int32),
        np.array(klasses, dtype=np.uint8),
        np.array(offsets, dtype=np.int64),
        feature_count=d, n_samples=n_samples, seed=seed, min_leaf=min_leaf,
        version=version)
