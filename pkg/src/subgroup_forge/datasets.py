"""Synthetic tasks with a planted subgroup symmetry.

Each split draws from its own child of ``np.random.SeedSequence(seed)``, so
splits are independent and every dataset is a pure function of (task, seed).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from subgroup_forge.groups import SubgroupSpec, Sk_on, Zk_on, element_array

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class PolynomialTask:
    """sum_i x[c_i] * x[c_{i+1}]^2 over the ordered cycle c (indices wrap)."""

    n: int
    k: int
    cycle_indices: tuple[int, ...] | None = None
    n_train: int = 64
    n_val: int = 480
    n_test: int = 4800
    kind: str = field(default="polynomial", init=False)

    def __post_init__(self):
        cyc = tuple(range(self.k)) if self.cycle_indices is None else tuple(int(i) for i in self.cycle_indices)
        if len(cyc) != self.k:
            raise ValueError(f"cycle has {len(cyc)} indices, expected k={self.k}")
        object.__setattr__(self, "cycle_indices", cyc)

    @property
    def true_indices(self):
        return self.cycle_indices

    @property
    def group(self) -> SubgroupSpec:
        return Zk_on(self.cycle_indices, self.n)

    @property
    def label(self) -> str:
        return f"Z{self.k}:Z{self.n}"

    def sizes(self):
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}

    def target(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        c = np.asarray(self.cycle_indices)
        a, b = X[..., c], X[..., np.roll(c, -1)]
        return (a * b * b).sum(axis=-1)

    def to_json(self):
        out = asdict(self)
        out["cycle_indices"] = list(self.cycle_indices)
        return out


@dataclass(frozen=True)
class DigitSumTask:
    """Sum of the digits sitting in ``true_indices`` among n noisy one-hot glyphs,
    divided by 9k so targets lie in [0, 1]."""

    n: int = 10
    k: int = 3
    true_indices: tuple[int, ...] | None = None
    glyph_dim: int = 10
    noise_sigma: float = 0.3
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 2000
    kind: str = field(default="digitsum", init=False)

    def __post_init__(self):
        idx = tuple(range(self.k)) if self.true_indices is None else tuple(int(i) for i in self.true_indices)
        if len(idx) != self.k:
            raise ValueError(f"{len(idx)} true indices, expected k={self.k}")
        if self.glyph_dim < 10:
            raise ValueError("glyph_dim must be >= 10 to hold one-hot digits")
        object.__setattr__(self, "true_indices", idx)

    @property
    def group(self) -> SubgroupSpec:
        return Sk_on(self.true_indices, self.n)

    @property
    def label(self) -> str:
        return f"S{self.k}:S{self.n}"

    def sizes(self):
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}

    def glyphs(self, digits, rng) -> np.ndarray:
        digits = np.asarray(digits)
        out = np.zeros(digits.shape + (self.glyph_dim,))
        np.put_along_axis(out, digits[..., None], 1.0, axis=-1)
        if self.noise_sigma:
            out += rng.normal(0.0, self.noise_sigma, size=out.shape)
        return out

    def to_json(self):
        out = asdict(self)
        out["true_indices"] = list(self.true_indices)
        return out


def task_from_json(obj) -> PolynomialTask | DigitSumTask:
    obj = dict(obj)
    kind = obj.pop("kind", "polynomial")
    if kind == "polynomial":
        if "cycle" in obj:
            obj["cycle_indices"] = obj.pop("cycle")
        if obj.get("cycle_indices") is not None:
            obj["cycle_indices"] = tuple(obj["cycle_indices"])
        return PolynomialTask(**obj)
    if kind == "digitsum":
        if obj.get("true_indices") is not None:
            obj["true_indices"] = tuple(obj["true_indices"])
        return DigitSumTask(**obj)
    raise ValueError(f"unknown task kind {kind!r}")


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray
    digits: np.ndarray | None = None

    def __len__(self):
        return len(self.y)


def _split_rngs(seed: int):
    return dict(zip(SPLITS, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(SPLITS)))))


def gen_polynomial(task: PolynomialTask, seed: int = 0) -> dict[str, Split]:
    rngs = _split_rngs(seed)
    out = {}
    for name, size in task.sizes().items():
        X = rngs[name].uniform(0.0, 1.0, size=(size, task.n))
        out[name] = Split(X, task.target(X))
    return out


def gen_digitsum(task: DigitSumTask, seed: int = 0) -> dict[str, Split]:
    """Slots are flattened to rows of length n * glyph_dim."""
    rngs = _split_rngs(seed)
    idx = np.asarray(task.true_indices)
    out = {}
    for name, size in task.sizes().items():
        rng = rngs[name]
        digits = rng.integers(0, 10, size=(size, task.n))
        X = task.glyphs(digits, rng).reshape(size, task.n * task.glyph_dim)
        y = digits[:, idx].sum(axis=1) / (9.0 * max(task.k, 1))
        out[name] = Split(X, y, digits)
    return out


def generate(task, seed: int = 0) -> dict[str, Split]:
    if isinstance(task, PolynomialTask):
        return gen_polynomial(task, seed)
    return gen_digitsum(task, seed)


def invariance_audit(task, data: dict[str, Split], tol: float = 1e-12) -> float:
    """Largest target change over every group element and sample.

    Polynomial targets are recomputed on permuted inputs; digit-sum targets on
    permuted digit labels.
    """
    perms = element_array(task.group)
    worst = 0.0
    for split in data.values():
        if isinstance(task, PolynomialTask):
            for g in perms:
                worst = max(worst, float(np.abs(task.target(split.X[:, g]) - split.y).max(initial=0.0)))
        else:
            idx = np.asarray(task.true_indices)
            for g in perms:
                moved = split.digits[:, g]
                y = moved[:, idx].sum(axis=1) / (9.0 * max(task.k, 1))
                worst = max(worst, float(np.abs(y - split.y).max(initial=0.0)))
    return worst


def to_csv(split: Split) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    width = split.X.shape[1]
    writer.writerow([f"x{i}" for i in range(width)] + ["y"])
    for row, target in zip(split.X, split.y):
        writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    return buf.getvalue()


def from_csv(text: str) -> Split:
    rows = list(csv.reader(io.StringIO(text)))
    body = np.asarray([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    if body.size == 0:
        width = len(rows[0]) - 1
        return Split(np.empty((0, width)), np.empty(0))
    return Split(body[:, :-1], body[:, -1])


def save_dataset(directory, task, data: dict[str, Split], seed: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, split in data.items():
        (directory / f"{name}.csv").write_text(to_csv(split), encoding="utf-8", newline="")
    sidecar = {"task": task.to_json(), "seed": seed, "splits": {k: len(v) for k, v in data.items()}}
    (directory / "dataset.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_dataset(directory):
    directory = Path(directory)
    meta_path = directory / "dataset.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset at {directory} (missing dataset.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    task = task_from_json(meta["task"])
    data = {name: from_csv((directory / f"{name}.csv").read_text(encoding="utf-8")) for name in SPLITS}
    return task, data, meta["seed"]
