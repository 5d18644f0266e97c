"""Reading the acted-upon coordinates off a trained mask matrix.

A column of M whose L1 norm exceeds the mean column norm is taken to be an
index the subgroup acts on. The estimate counts as a success only when the
selected set equals the true index set exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass
class IndexEstimate:
    column_l1: list[float]
    threshold: float
    estimated_indices: tuple[int, ...]
    true_indices: tuple[int, ...]
    success: bool
    complement_l1: list[float] | None = None
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "column_l1": [float(v) for v in self.column_l1],
            "threshold": float(self.threshold),
            "estimated_indices": list(self.estimated_indices),
            "true_indices": list(self.true_indices),
            "success": self.success,
            "complement_l1": None if self.complement_l1 is None else [float(v) for v in self.complement_l1],
            "notes": list(self.notes),
        }

    @classmethod
    def from_json(cls, obj) -> IndexEstimate:
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(
            list(obj["column_l1"]),
            float(obj["threshold"]),
            tuple(obj["estimated_indices"]),
            tuple(obj["true_indices"]),
            bool(obj["success"]),
            obj.get("complement_l1"),
            list(obj.get("notes", [])),
        )


def estimate_indices(M, true_indices=(), complement=False) -> IndexEstimate:
    """Columns with L1 norm strictly above the mean column norm.

    The comparison is done in exact rational arithmetic on the float entries,
    so permuting rows never changes the result, and neither does any scaling
    that is itself exact (powers of two, for instance).

    With ``complement=True`` (Sk heads) the column norms of I - M are also
    recorded for inspection; they do not enter the estimate.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if not np.all(np.isfinite(M)):
        raise ValueError("mask matrix has non-finite entries")
    # exact rational sums: the decision cannot depend on row order or rounding
    exact = [sum(map(Fraction, np.abs(M[:, j]).tolist()), Fraction(0)) for j in range(M.shape[1])]
    total = sum(exact, Fraction(0))
    width = len(exact)
    col = np.array([math.fsum(np.abs(M[:, j])) for j in range(width)])
    threshold = float(total / width)
    picked = tuple(j for j, c in enumerate(exact) if c * width > total)
    truth = tuple(sorted(int(i) for i in true_indices))
    est = IndexEstimate(col.tolist(), threshold, picked, truth, set(picked) == set(truth))
    if all(c == exact[0] for c in exact):
        est.notes.append("all column norms tie at the threshold")
        warnings.warn("all column norms tie at the threshold; nothing is selected", stacklevel=2)
    if complement:
        est.complement_l1 = np.abs(np.eye(M.shape[0], M.shape[1]) - M).sum(axis=0).tolist()
    return est


def estimation_accuracy(reports) -> float:
    """Percentage of trials whose index estimate succeeded."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    return 100.0 * sum(bool(r.success) for r in reports) / len(reports)


def accuracy_table_csv(rows: dict[str, dict[int, float]], sizes=(16, 32, 64)) -> str:
    """Rows keyed by 'Zk:Zn' label, columns by training-set size N."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["Zk:Zn", *[str(s) for s in sizes]])
    for label, by_size in rows.items():
        writer.writerow([label, *["" if s not in by_size else f"{by_size[s]:g}" for s in sizes]])
    return buf.getvalue()


def refit_with_estimate(estimate: IndexEstimate, task, cfg, data=None, seed=None):
    """Train the composed model with the ideal mask built from the estimate, frozen.

    Indices are used in ascending order as the cycle. Returns a TrialReport;
    when the estimate cannot define a mask (empty, or its size does not
    divide n for cyclic tasks) the report is a skipped placeholder with a note.
    """
    from subgroup_forge import training  # deferred: training imports this module

    k = len(estimate.estimated_indices)
    seed = cfg.seed if seed is None else seed
    if k == 0:
        return training.TrialReport.make_skipped("refit", seed, "empty index estimate")
    variant = "ZD" if task.kind == "polynomial" else "Sk"
    if variant == "ZD" and task.n % k:
        return training.TrialReport.make_skipped("refit", seed, f"estimated k={k} does not divide n={task.n}")
    if data is None:
        from subgroup_forge.datasets import generate
        data = generate(task, cfg.seed)
    model = training.build_model("refit", task, np.random.default_rng(seed), cfg, indices=estimate.estimated_indices)
    return training.train(model, data, cfg, method="refit", seed=seed)
