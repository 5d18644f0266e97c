"""Pure numpy implementations of the hot kernels.

Every function here has a twin of the same name and signature in the compiled
``_kernels`` extension. ``subgroup_forge.kernels`` picks one at import time.
"""

import numpy as np

_MAX_KEY_DEGREE = 16


def perm_keys(perms):
    """Injective uint64 key per permutation row (base-n positional code)."""
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    m, n = perms.shape
    if n > _MAX_KEY_DEGREE:
        raise ValueError(f"keyed lookup supports degree <= {_MAX_KEY_DEGREE}, got {n}")
    weights = np.array([n**t for t in range(n)], dtype=np.uint64)
    return (perms.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def cayley_table(perms):
    """table[i, j] = row index of compose(perms[i], perms[j]) or -1 if absent.

    compose(p, q) has mapping q[p], so that applying it equals applying q
    first and then p.
    """
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    m, n = perms.shape
    if n > _MAX_KEY_DEGREE:
        lookup = {tuple(p): i for i, p in enumerate(perms.tolist())}
        table = np.full((m, m), -1, dtype=np.int64)
        for i in range(m):
            prods = perms[:, perms[i]]
            for j in range(m):
                table[i, j] = lookup.get(tuple(prods[j]), -1)
        return table

    keys = perm_keys(perms)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    weights = np.array([n**t for t in range(n)], dtype=np.uint64)
    table = np.empty((m, m), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, m * n))
    for start in range(0, m, chunk):
        stop = min(m, start + chunk)
        # prods[a, j, :] = perms[j][perms[start + a]]
        prods = perms[:, perms[start:stop]].transpose(1, 0, 2)
        pk = (prods.astype(np.uint64) * weights).sum(axis=2, dtype=np.uint64)
        pos = np.searchsorted(sorted_keys, pk)
        pos_c = np.minimum(pos, m - 1)
        hit = sorted_keys[pos_c] == pk
        table[start:stop] = np.where(hit, order[pos_c], -1)
    return table


def first_match(target, source, perms, tol):
    """First g with max |target - source[:, perms[g]]| <= tol, else -1."""
    target = np.asarray(target, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    perms = np.asarray(perms, dtype=np.int64)
    if len(perms) == 0:
        return -1
    moved = source[:, perms]  # probes x |G| x r
    err = np.abs(moved - target[:, None, :]).max(axis=(0, 2))
    ok = np.flatnonzero(err <= tol)
    return int(ok[0]) if ok.size else -1


def close_pairs(points, tol):
    """All (i, j), i < j, whose rows agree to within tol in max-norm."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    count = len(points)
    if count < 2:
        return np.empty((0, 2), dtype=np.int64)
    order = np.argsort(points[:, 0], kind="stable")
    lead = points[order, 0]
    ends = np.searchsorted(lead, lead + tol, side="right")
    widths = ends - np.arange(count) - 1
    total = int(widths.sum())
    if total == 0:
        return np.empty((0, 2), dtype=np.int64)
    a = np.repeat(np.arange(count), widths)
    offsets = np.arange(total) - np.repeat(np.cumsum(widths) - widths, widths)
    b = a + 1 + offsets
    ia, ib = order[a], order[b]
    same = np.abs(points[ia] - points[ib]).max(axis=1) <= tol
    pairs = np.stack([np.minimum(ia, ib), np.maximum(ia, ib)], axis=1)[same]
    if len(pairs) == 0:
        return pairs
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def scatter_add_cols(grad, idx, width):
    """out[:, idx[k]] += grad[:, k]; the adjoint of column gathering."""
    grad = np.asarray(grad, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    onehot = np.zeros((len(idx), width))
    onehot[np.arange(len(idx)), idx] = 1.0
    return grad @ onehot
