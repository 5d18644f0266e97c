"""Learnable linear heads placed in front of a fixed-group invariant network.

Two head shapes, emitting ``2n`` features from an ``n``-vector x:

* ``Sk``: ``[(I - M) x ; M x]``, feeding a network that pools the second block
  with a symmetric function (any subgroup S_k of S_n).
* ``ZD``: ``[M x ; (I - L) x]``, feeding a network invariant under the cyclic
  (or dihedral) group of the first block (Z_k or D_2k with k dividing n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from subgroup_forge import autodiff as ad
from subgroup_forge.groups import DimensionError
from subgroup_forge.nets import Module

VARIANTS = ("Sk", "ZD")


class DivisibilityError(ValueError):
    """k must divide n for cyclic and dihedral heads."""


@dataclass(frozen=True)
class IdealMask:
    n: int
    k: int
    variant: str
    indices: tuple[int, ...]
    M: np.ndarray
    L: np.ndarray | None = None


def build_ideal(n: int, k: int, variant: str, indices=None) -> IdealMask:
    """Exact masks under which the composed model has the target symmetry.

    Sk: M = diag(1 on indices), so Mx keeps the acted-upon coordinates and
    (I - M)x keeps the rest. ZD: M stacks n/k copies of the k-selector of the
    ordered cycle ``indices`` and L = diag(1 on indices).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    indices = tuple(range(k)) if indices is None else tuple(int(i) for i in indices)
    if len(indices) != k or len(set(indices)) != k or any(not 0 <= i < n for i in indices):
        raise DimensionError(f"need {k} distinct indices in 0..{n - 1}, got {indices}")
    diag = np.zeros((n, n))
    diag[indices, indices] = 1.0
    if variant == "Sk":
        return IdealMask(n, k, variant, indices, diag)
    if k == 0 or n % k:
        raise DivisibilityError(f"cyclic/dihedral head needs k | n, got k={k}, n={n}")
    M = np.zeros((n, n))
    rows = np.arange(n)
    M[rows, np.asarray(indices)[rows % k]] = 1.0
    return IdealMask(n, k, variant, indices, M, diag)


class MaskHead(Module):
    """The learnable map M (and L for the ZD variant).

    Entries start iid uniform on [0, 2/n] unless given. ``trainable=False``
    freezes the matrices (the known-subgroup baseline).
    """

    def __init__(self, rng, n, variant="Sk", l1_penalty=0.0, M=None, L=None, trainable=True):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.n, self.variant, self.l1_penalty = n, variant, float(l1_penalty)
        make = ad.param if trainable else ad.constant
        if M is None:
            M = rng.uniform(0.0, 2.0 / n, size=(n, n))
        self.M = make(np.array(M, dtype=np.float64))
        if variant == "ZD":
            if L is None:
                L = rng.uniform(0.0, 2.0 / n, size=(n, n))
            self.L = make(np.array(L, dtype=np.float64))
        else:
            self.L = None

    @classmethod
    def from_ideal(cls, ideal: IdealMask, trainable=False, l1_penalty=0.0):
        return cls(None, ideal.n, ideal.variant, l1_penalty, ideal.M, ideal.L, trainable)

    def __call__(self, X):
        if X.value.ndim != 2 or X.shape[1] != self.n:
            raise DimensionError(f"head expects width {self.n}, got shape {X.shape}")
        MX = ad.matmul(X, ad.transpose(self.M))
        if self.variant == "Sk":
            return ad.concat([X - MX, MX], axis=1)
        LX = ad.matmul(X, ad.transpose(self.L))
        return ad.concat([MX, X - LX], axis=1)

    def matrices(self) -> dict:
        out = {"M": self.M.value.copy()}
        if self.L is not None:
            out["L"] = self.L.value.copy()
        return out


def head_forward(head: MaskHead, x) -> np.ndarray:
    """Apply the head to one vector (or a batch of rows) without building a graph for the caller."""
    x = np.asarray(x, dtype=np.float64)
    out = head(ad.constant(np.atleast_2d(x))).value
    return out if x.ndim == 2 else out[0]


def regularization_term(head: MaskHead) -> ad.Node:
    """l1_penalty * (sum |M| + sum |L|); a zero constant when the penalty is 0."""
    if head.l1_penalty == 0.0:
        return ad.constant(0.0)
    total = ad.sum_(ad.abs_(head.M))
    if head.L is not None:
        total = total + ad.sum_(ad.abs_(head.L))
    return total * head.l1_penalty


class ComposedModel(Module):
    """backbone(head(encoder(x))); the encoder maps raw slots to n scalars."""

    def __init__(self, head: MaskHead, backbone: Module, encoder: Module | None = None):
        self.head = head
        self.backbone = backbone
        self.encoder = encoder

    def __call__(self, X):
        if self.encoder is not None:
            X = self.encoder(X)
        return self.backbone(self.head(X))

    def regularization(self):
        return regularization_term(self.head)


def mask_to_pgm(M) -> bytes:
    """Binary 8-bit PGM of M, min-max normalised per matrix (constant -> all zero).

    A header comment ``# range <min> <max>`` records the normalisation so that
    ``pgm_values`` can map pixels back to (quantised) entries.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lo, hi = M.min(), M.max()
    scaled = np.zeros_like(M) if hi == lo else (M - lo) / (hi - lo)
    pixels = np.rint(scaled * 255.0).astype(np.uint8)
    rows, cols = M.shape
    header = f"P5\n# range {float(lo)!r} {float(hi)!r}\n{cols} {rows}\n255\n"
    return header.encode("ascii") + pixels.tobytes()


def _pgm_header(blob: bytes):
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            end = blob.index(b"\n", pos)
            comments.append(blob[pos + 1:end].decode("ascii").split())
            pos = end
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows, _ = (int(t) for t in tokens[1:])
    return rows, cols, comments, pos + 1


def pgm_to_array(blob: bytes) -> np.ndarray:
    rows, cols, _, offset = _pgm_header(blob)
    data = np.frombuffer(blob, dtype=np.uint8, count=rows * cols, offset=offset)
    return data.reshape(rows, cols)


def pgm_values(blob: bytes) -> np.ndarray:
    """Entries reconstructed from the pixels and the recorded range, to within half a grey level."""
    _, _, comments, _ = _pgm_header(blob)
    ranges = [c for c in comments if len(c) == 3 and c[0] == "range"]
    if not ranges:
        raise ValueError("PGM carries no range comment")
    lo, hi = float(ranges[0][1]), float(ranges[0][2])
    return lo + pgm_to_array(blob) / 255.0 * (hi - lo)
