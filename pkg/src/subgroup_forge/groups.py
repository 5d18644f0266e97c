"""Finite permutation groups acting on coordinate vectors.

Action convention, used everywhere in the package::

    apply(p, x)[i] == x[p.mapping[i]]

so the matrix of ``p`` is the identity with its rows permuted by ``mapping``,
and ``compose(p, q)`` (mapping ``q[p]``) satisfies
``apply(compose(p, q), x) == apply(p, apply(q, x))``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from subgroup_forge import kernels

DEFAULT_CAP = math.factorial(10)

FAMILIES = ("S_full", "Sk", "Zk", "D2k", "Ak", "Explicit")


class DimensionError(ValueError):
    """Raised when vector lengths or degrees do not line up."""


class CapacityError(RuntimeError):
    """Raised when a group is too large to enumerate under the cap."""


@dataclass(frozen=True)
class Permutation:
    mapping: tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(v) for v in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"not a bijection on 0..{len(mapping) - 1}: {mapping}")
        object.__setattr__(self, "mapping", mapping)

    @property
    def n(self) -> int:
        return len(self.mapping)

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(tuple(range(n)))

    @classmethod
    def transposition(cls, n: int, i: int, j: int) -> Permutation:
        mapping = list(range(n))
        mapping[i], mapping[j] = mapping[j], mapping[i]
        return cls(tuple(mapping))

    @classmethod
    def cycle_shift(cls, n: int, cycle, steps: int = 1) -> Permutation:
        """Rotate the entries sitting at ``cycle`` by ``steps`` places."""
        mapping = list(range(n))
        k = len(cycle)
        for i, c in enumerate(cycle):
            mapping[c] = cycle[(i + steps) % k]
        return cls(tuple(mapping))

    def inverse(self) -> Permutation:
        return Permutation(tuple(np.argsort(self.mapping).tolist()))

    def is_identity(self) -> bool:
        return self.mapping == tuple(range(self.n))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)

    def matrix(self) -> np.ndarray:
        """Permutation matrix P with P @ x == apply(self, x)."""
        return np.eye(self.n)[list(self.mapping)]

    def to_json(self) -> list[int]:
        return list(self.mapping)


def compose(p: Permutation, q: Permutation) -> Permutation:
    """The permutation acting as ``q`` first, then ``p``."""
    if p.n != q.n:
        raise DimensionError(f"degree mismatch: {p.n} vs {q.n}")
    return Permutation(tuple(q.mapping[i] for i in p.mapping))


def apply_permutation(p: Permutation, x) -> np.ndarray:
    """Act on the last axis of ``x`` (a vector or a batch of row vectors)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.n:
        raise DimensionError(f"vector length {x.shape[-1]} != degree {p.n}")
    return x[..., list(p.mapping)]


@dataclass(frozen=True)
class SubgroupSpec:
    """A named permutation subgroup of S_n.

    ``indices`` holds the acted-upon positions (for Zk/D2k, the ordered
    cycle). ``elements`` is only used by the Explicit family.
    """

    family: str
    n: int
    indices: tuple[int, ...] = ()
    elements: tuple[tuple[int, ...], ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "elements", tuple(tuple(int(v) for v in e) for e in self.elements))
        if self.family == "S_full":
            object.__setattr__(self, "indices", tuple(range(self.n)))
        if len(set(self.indices)) != len(self.indices):
            raise ValueError(f"repeated index in {self.indices}")
        if any(i < 0 or i >= self.n for i in self.indices):
            raise DimensionError(f"indices {self.indices} out of range for degree {self.n}")
        if self.family == "Explicit" and any(len(e) != self.n for e in self.elements):
            raise DimensionError("explicit element with wrong degree")

    @property
    def k(self) -> int:
        return len(self.indices)

    def order(self) -> int:
        """Group order, computed without enumerating."""
        k = self.k
        if self.family in ("S_full", "Sk"):
            return math.factorial(k)
        if self.family == "Ak":
            return max(1, math.factorial(k) // 2)
        if self.family == "Zk":
            return max(k, 1)
        if self.family == "D2k":
            return 2 * k if k >= 3 else max(k, 1)
        return len(set(self.elements))

    def to_json(self) -> dict:
        out = {"family": self.family, "n": self.n}
        if self.family in ("Zk", "D2k"):
            out["cycle"] = list(self.indices)
        elif self.family in ("Sk", "Ak"):
            out["indices"] = list(self.indices)
        elif self.family == "Explicit":
            out["elements"] = [list(e) for e in self.elements]
        return out

    @classmethod
    def from_json(cls, obj) -> SubgroupSpec:
        if isinstance(obj, str):
            obj = json.loads(obj)
        family = obj["family"]
        indices = obj.get("cycle", obj.get("indices", ()))
        return cls(family, int(obj["n"]), tuple(indices), tuple(tuple(e) for e in obj.get("elements", ())))


def S_full(n: int) -> SubgroupSpec:
    return SubgroupSpec("S_full", n)


def Sk_on(indices, n: int) -> SubgroupSpec:
    return SubgroupSpec("Sk", n, tuple(indices))


def Ak_on(indices, n: int) -> SubgroupSpec:
    return SubgroupSpec("Ak", n, tuple(indices))


def Zk_on(cycle, n: int) -> SubgroupSpec:
    return SubgroupSpec("Zk", n, tuple(cycle))


def D2k_on(cycle, n: int) -> SubgroupSpec:
    return SubgroupSpec("D2k", n, tuple(cycle))


def explicit(perms, n: int) -> SubgroupSpec:
    rows = [tuple(p.mapping) if isinstance(p, Permutation) else tuple(p) for p in perms]
    return SubgroupSpec("Explicit", n, (), tuple(rows))


def trivial(n: int) -> SubgroupSpec:
    return SubgroupSpec("Sk", n, ())


def _parity(perm) -> int:
    perm = list(perm)
    seen = [False] * len(perm)
    swaps = 0
    for i in range(len(perm)):
        length = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length:
            swaps += length - 1
    return swaps % 2


def element_array(spec: SubgroupSpec, cap: int = DEFAULT_CAP, allow_large: bool = False) -> np.ndarray:
    """All group elements as rows of an ``(order, n)`` int array, each exactly once."""
    order = spec.order()
    if order > cap and not allow_large:
        raise CapacityError(f"group of order {order} exceeds enumeration cap {cap}")
    n, idx, k = spec.n, np.asarray(spec.indices, dtype=np.int64), spec.k
    base = np.arange(n, dtype=np.int64)

    if spec.family == "Explicit":
        rows = np.asarray(sorted(set(spec.elements)), dtype=np.int64).reshape(-1, n)
        return rows
    if k == 0:
        return base[None, :].copy()
    if spec.family in ("S_full", "Sk", "Ak"):
        local = np.array(list(itertools.permutations(range(k))), dtype=np.int64)
        if spec.family == "Ak":
            local = local[[_parity(row) == 0 for row in local]]
        out = np.tile(base, (len(local), 1))
        out[:, idx] = idx[local]
        return out
    steps = np.arange(k)
    pos = np.arange(k)
    local = (pos[None, :] + steps[:, None]) % k
    if spec.family == "D2k":
        local = np.concatenate([local, (steps[:, None] - pos[None, :]) % k])
    out = np.tile(base, (len(local), 1))
    out[:, idx] = idx[local]
    return np.unique(out, axis=0) if spec.family == "D2k" and k < 3 else out


def enumerate_group(spec: SubgroupSpec, cap: int = DEFAULT_CAP, allow_large: bool = False) -> list[Permutation]:
    return [Permutation(tuple(row)) for row in element_array(spec, cap, allow_large).tolist()]


def is_group(perms) -> bool:
    """Closure, identity and inverses, checked exhaustively through the Cayley table."""
    perms = np.asarray(perms, dtype=np.int64)
    if perms.ndim != 2 or len(perms) == 0:
        return False
    n = perms.shape[1]
    ident = np.flatnonzero((perms == np.arange(n)).all(axis=1))
    if ident.size != 1:
        return False
    table = kernels.cayley_table(perms)
    if (table < 0).any():
        return False
    return bool(((table == ident[0]).any(axis=1)).all())


def conjugate_subgroup(spec: SubgroupSpec, g: Permutation, cap: int = DEFAULT_CAP) -> SubgroupSpec:
    """The subgroup {g h g^-1 : h in spec} as an Explicit spec."""
    if g.n != spec.n:
        raise DimensionError(f"degree mismatch: {g.n} vs {spec.n}")
    elems = element_array(spec, cap)
    garr = g.as_array()
    ginv = np.argsort(garr)
    # compose(compose(g, h), g^-1) has mapping ginv[h[g]]
    conj = ginv[elems[:, garr]]
    return explicit(conj.tolist(), spec.n)


@dataclass
class IntertwiningReport:
    cond1: bool
    cond2: bool
    cond1_witness: tuple[int, ...] | None = None
    cond2_witness: tuple[int, ...] | None = None
    matched_pairs: int = 0
    range_elements: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.cond1 and self.cond2

    def summary(self) -> str:
        word = {True: "PASS", False: "FAIL"}
        return f"cond1 {word[self.cond1]}, cond2 {word[self.cond2]}"

    def to_json(self) -> dict:
        return {
            "cond1": self.cond1,
            "cond2": self.cond2,
            "cond1_witness": list(self.cond1_witness) if self.cond1_witness else None,
            "cond2_witness": list(self.cond2_witness) if self.cond2_witness else None,
            "matched_pairs": self.matched_pairs,
            "range_elements": self.range_elements,
            "warnings": self.warnings,
        }


def check_intertwining(H: SubgroupSpec, G: SubgroupSpec, M, probes: int = 32, tol: float = 1e-9,
                    seed: int = 0, cap: int = DEFAULT_CAP) -> IntertwiningReport:
    """Check that the linear map M intertwines the actions of H and G.

    cond1: every h in H has a g in G with M(h.x) = g.(Mx) on all probes.
    cond2: every g in G whose action keeps Mx inside range(M) on all probes
    has an h in H with M(h.x) = g.(Mx).

    Equalities are checked on ``probes`` random vectors in [0, 1]^n with a
    shared group element across probes, in max-norm against ``tol``. For a
    linear map, agreement on more than n generic probes implies agreement
    everywhere.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[1] != H.n:
        raise DimensionError(f"M has {M.shape[1]} columns but H acts on {H.n} coordinates")
    if M.shape[0] != G.n:
        raise DimensionError(f"M has {M.shape[0]} rows but G acts on {G.n} coordinates")
    h_elems = element_array(H, cap)
    g_elems = element_array(G, cap)
    report = IntertwiningReport(cond1=True, cond2=True)
    if not np.any(M):
        msg = "degenerate map: M is identically zero"
        report.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)

    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(probes, H.n))
    MX = X @ M.T
    moved = np.stack([X[:, h] @ M.T for h in h_elems])  # |H| x probes x rows

    for h, target in zip(h_elems, moved):
        if kernels.first_match(target, MX, g_elems, tol) < 0:
            report.cond1 = False
            report.cond1_witness = tuple(int(v) for v in h)
            break
        report.matched_pairs += 1

    coeffs, *_ = np.linalg.lstsq(M, np.eye(M.shape[0]), rcond=None)
    projector = M @ coeffs  # orthogonal projector onto range(M)
    flat_moved = moved.reshape(len(h_elems), -1)
    for g in g_elems:
        image = MX[:, g]
        residual = np.abs(image @ projector.T - image).max()
        if residual > tol:
            continue
        report.range_elements += 1
        err = np.abs(flat_moved - image.reshape(-1)).max(axis=1)
        if not (err <= tol).any():
            report.cond2 = False
            report.cond2_witness = tuple(int(v) for v in g)
            break
    return report
