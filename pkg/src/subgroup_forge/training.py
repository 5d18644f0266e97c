"""Training loops, the method zoo and the multi-trial runner.

Methods
-------
known
    The composed model with the exact mask of the true subgroup, frozen.
    For digit-sum tasks this is Deep Sets over the k true slots only.
proposed
    The composed model with a learned mask.
simple_fc, conv1d
    Non-invariant baselines on the raw inputs (on per-slot scores for
    digit-sum tasks).
refit
    Like ``known`` but with the mask built from estimated indices.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from subgroup_forge import autodiff as ad
from subgroup_forge import nets
from subgroup_forge.datasets import DigitSumTask, PolynomialTask, Split, generate
from subgroup_forge.discovery import estimate_indices
from subgroup_forge.groups import DimensionError, element_array
from subgroup_forge.heads import ComposedModel, MaskHead, build_ideal

METHODS = ("known", "proposed", "simple_fc", "conv1d")

DEFAULT_ARCH = {
    "window": 2,
    "channels": 16,
    "local_hidden": [32],
    "sum_product": True,
    "pass_through": True,
    "outer": [32],
    "set_inner": [32, 32],
    "set_outer": [32],
    "encoder_hidden": [16],
    "fc_widths": [64, 64],
    "conv_channels": [8, 8],
    "conv_kernel": 3,
    "conv_fc": [32],
}


@dataclass
class TrainConfig:
    epochs: int = 2500
    lr: float = 1e-3
    batch_size: int | None = None  # None: full batch
    loss: str = "mae"
    seed: int = 0
    l1_penalty: float = 0.0
    trials: int = 10
    log_every: int = 100
    audit_every: int = 500
    arch: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.loss not in ("mae", "mse"):
            raise ValueError(f"loss must be 'mae' or 'mse', got {self.loss!r}")
        if self.epochs < 0 or self.trials < 1:
            raise ValueError("epochs must be >= 0 and trials >= 1")

    def arch_value(self, key):
        return self.arch.get(key, DEFAULT_ARCH[key])

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown train config field(s): {sorted(extra)}")
        return cls(**obj)


@dataclass
class TrialReport:
    method: str
    seed: int
    train_loss: list[float] = field(default_factory=list)
    mae: dict[str, float] = field(default_factory=dict)
    logged: list[tuple[int, str, float]] = field(default_factory=list)
    wall_time: float = 0.0
    M: np.ndarray | None = None
    L: np.ndarray | None = None
    estimate: object = None
    failed: bool = False
    skipped: bool = False
    audits: list[tuple[int, float]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    state: dict | None = field(default=None, repr=False)

    @property
    def estimated_indices(self):
        return None if self.estimate is None else self.estimate.estimated_indices

    @property
    def success(self) -> bool:
        return bool(self.estimate is not None and self.estimate.success and not self.failed)

    @classmethod
    def make_skipped(cls, method, seed, note):
        return cls(method=method, seed=seed, skipped=True, notes=[note])

    def to_json(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "train_loss": [float(v) for v in self.train_loss],
            "mae": {k: float(v) for k, v in self.mae.items()},
            "wall_time": self.wall_time,
            "M": None if self.M is None else self.M.tolist(),
            "L": None if self.L is None else self.L.tolist(),
            "estimate": None if self.estimate is None else self.estimate.to_json(),
            "success": self.success,
            "failed": self.failed,
            "skipped": self.skipped,
            "audits": [list(a) for a in self.audits],
            "notes": self.notes,
        }


def mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise DimensionError(f"length mismatch: {pred.shape[0]} vs {target.shape[0]}")
    return float(np.abs(pred - target).mean())


class SlotEncoder(nets.Module):
    """Shared MLP mapping each glyph slot to one scalar score."""

    def __init__(self, rng, slots, glyph_dim, hidden=(16,), pick=None):
        self.slots, self.glyph_dim = slots, glyph_dim
        self.pick = None if pick is None else np.asarray(pick, dtype=np.int64)
        self.count = slots if pick is None else len(self.pick)
        self.cols = None
        if self.pick is not None:
            self.cols = (self.pick[:, None] * glyph_dim + np.arange(glyph_dim)[None, :]).reshape(-1)
        self.mlp = nets.MLP(rng, [glyph_dim, *hidden, 1])

    def __call__(self, X):
        B = X.shape[0]
        if self.cols is not None:
            X = ad.take_cols(X, self.cols)
        scores = self.mlp(ad.reshape(X, (B * self.count, self.glyph_dim)))
        return ad.reshape(scores, (B, self.count))


class Encoded(nets.Module):
    def __init__(self, encoder, net):
        self.encoder = encoder
        self.net = net

    def __call__(self, X):
        return self.net(self.encoder(X))


class FirstBlock(nets.Module):
    """Feeds only the first ``n`` head outputs (the Mx block) to ``net``."""

    def __init__(self, net, n):
        self.net = net
        self.n = n

    def __call__(self, X):
        return self.net(ad.slice_cols(X, 0, self.n))


def _backbone_zd(rng, n, cfg):
    net = nets.CyclicInvariantNet(
        rng, n, pass_dim=n if cfg.arch_value("pass_through") else 0,
        window=min(cfg.arch_value("window"), n),
        hidden=tuple(cfg.arch_value("local_hidden")),
        channels=cfg.arch_value("channels"),
        sum_product=cfg.arch_value("sum_product"),
        outer=tuple(cfg.arch_value("outer")),
    )
    return net if cfg.arch_value("pass_through") else FirstBlock(net, n)


def _backbone_sk(rng, n, cfg):
    return nets.PassThroughPoolNet(rng, n, inner=tuple(cfg.arch_value("set_inner")),
                                   head=tuple(cfg.arch_value("set_outer")))


def build_model(method: str, task, rng: np.random.Generator, cfg: TrainConfig, indices=None) -> nets.Module:
    n = task.n
    if isinstance(task, PolynomialTask):
        if method in ("known", "refit"):
            idx = task.cycle_indices if method == "known" else tuple(sorted(indices))
            head = MaskHead.from_ideal(build_ideal(n, len(idx), "ZD", idx))
            return ComposedModel(head, _backbone_zd(rng, n, cfg))
        if method == "proposed":
            head = MaskHead(rng, n, "ZD", l1_penalty=cfg.l1_penalty)
            return ComposedModel(head, _backbone_zd(rng, n, cfg))
        if method == "simple_fc":
            return nets.SimpleFC(rng, n, tuple(cfg.arch_value("fc_widths")))
        if method == "conv1d":
            return nets.Conv1D(rng, n, cfg.arch_value("conv_kernel"), tuple(cfg.arch_value("conv_channels")),
                               tuple(cfg.arch_value("conv_fc")))
        raise ValueError(f"unknown method {method!r}")

    if not isinstance(task, DigitSumTask):
        raise TypeError(f"unsupported task {type(task).__name__}")
    hidden = tuple(cfg.arch_value("encoder_hidden"))
    inner, outer = tuple(cfg.arch_value("set_inner")), tuple(cfg.arch_value("set_outer"))
    if method == "known":
        enc = SlotEncoder(rng, n, task.glyph_dim, hidden, pick=task.true_indices)
        return Encoded(enc, nets.DeepSetsNet(rng, task.k, inner=inner, outer=outer))
    enc = SlotEncoder(rng, n, task.glyph_dim, hidden)
    if method in ("proposed", "refit"):
        if method == "proposed":
            head = MaskHead(rng, n, "Sk", l1_penalty=cfg.l1_penalty)
        else:
            head = MaskHead.from_ideal(build_ideal(n, len(indices), "Sk", tuple(sorted(indices))))
        return ComposedModel(head, _backbone_sk(rng, n, cfg), encoder=enc)
    if method == "simple_fc":
        return Encoded(enc, nets.SimpleFC(rng, n, tuple(cfg.arch_value("fc_widths"))))
    if method == "conv1d":
        return Encoded(enc, nets.Conv1D(rng, n, cfg.arch_value("conv_kernel"), tuple(cfg.arch_value("conv_channels")),
                                        tuple(cfg.arch_value("conv_fc"))))
    raise ValueError(f"unknown method {method!r}")


def _loss(pred, y, kind):
    diff = ad.sub(pred, y)
    return ad.mean(ad.abs_(diff)) if kind == "mae" else ad.mean(ad.mul(diff, diff))


def _audit(model, task, X) -> float:
    perms = element_array(task.group)
    base = model.predict(X)
    if isinstance(task, DigitSumTask):
        g = task.glyph_dim
        cols = [(p[:, None] * g + np.arange(g)[None, :]).reshape(-1) for p in perms]
    else:
        cols = perms
    return max(float(np.abs(model.predict(X[:, c]) - base).max()) for c in cols)


def train(model, data: dict[str, Split], cfg: TrainConfig, method="model", seed=None, task=None) -> TrialReport:
    """Adam on the training loss (+ mask regularisation) for ``cfg.epochs`` epochs.

    A non-finite loss ends the trial and marks it failed rather than raising.
    Passing ``task`` turns on an invariance audit every ``cfg.audit_every``
    epochs (meaningful for frozen exact masks).
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 7])
    report = TrialReport(method=method, seed=seed)
    start = time.perf_counter()
    train_split = data["train"]
    X, y = train_split.X, train_split.y.reshape(-1, 1)
    if X.shape[0] == 0:
        raise ValueError("empty training split")
    params = model.params()
    opt = ad.Adam(params, lr=cfg.lr)
    reg = getattr(model, "regularization", None)
    N = len(X)
    batch = N if not cfg.batch_size or cfg.batch_size >= N else cfg.batch_size
    audit_rows = X[: min(32, N)]

    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(N) if batch == N else rng.permutation(N)
        total = 0.0
        for lo in range(0, N, batch):
            rows = order[lo:lo + batch]
            pred = model(ad.constant(X[rows] if batch != N else X))
            loss = _loss(pred, y[rows] if batch != N else y, cfg.loss)
            objective = loss + reg() if reg is not None else loss
            ad.backward(objective)
            opt.step()
            opt.zero_grad()
            total += float(loss.value) * len(rows)
        epoch_loss = total / N
        if not math.isfinite(epoch_loss):
            report.failed = True
            report.notes.append(f"non-finite loss at epoch {epoch}")
            break
        report.train_loss.append(epoch_loss)
        if cfg.log_every and epoch % cfg.log_every == 0:
            report.logged.append((epoch, "train", epoch_loss))
        if task is not None and cfg.audit_every and epoch % cfg.audit_every == 0:
            report.audits.append((epoch, _audit(model, task, audit_rows)))

    final_epoch = len(report.train_loss)
    for name, split in data.items():
        if len(split) == 0:
            continue
        pred = model.predict(split.X)
        report.mae[name] = mae(pred, split.y) if np.all(np.isfinite(pred)) else float("nan")
        report.logged.append((final_epoch, name, report.mae[name]))
    if report.mae and not all(math.isfinite(v) for v in report.mae.values()):
        report.failed = True

    head = getattr(model, "head", None)
    if isinstance(head, MaskHead):
        mats = head.matrices()
        report.M, report.L = mats["M"], mats.get("L")
    report.state = model.state_dict()
    report.wall_time = time.perf_counter() - start
    return report


def run_trial(task, method: str, cfg: TrainConfig, seed: int, data=None) -> TrialReport:
    data = generate(task, cfg.seed) if data is None else data
    model = build_model(method, task, np.random.default_rng(seed), cfg)
    audit_task = task if method == "known" else None
    report = train(model, data, cfg, method=method, seed=seed, task=audit_task)
    if method == "proposed" and report.M is not None and np.all(np.isfinite(report.M)):
        report.estimate = estimate_indices(report.M, task.true_indices, complement=task.kind == "digitsum")
    return report


def trial_seeds(cfg: TrainConfig):
    return [cfg.seed + t for t in range(cfg.trials)]


def _run_one(args):
    return run_trial(*args)


@dataclass
class ExperimentResult:
    task: object
    cfg: TrainConfig
    reports: dict[str, list[TrialReport]]

    def aggregate(self) -> list[dict]:
        rows = []
        for method, reps in self.reports.items():
            ok = [r for r in reps if not r.failed and not r.skipped]
            splits = sorted({s for r in ok for s in r.mae}, key=lambda s: ("train", "val", "test").index(s))
            for split in splits:
                vals = np.array([r.mae[split] for r in ok])
                rows.append({
                    "method": method,
                    "split": split,
                    "mean": float(vals.mean()),
                    "std": float(vals.std()),
                    "median": float(np.median(vals)),
                    "n_trials": len(reps),
                    "n_failed": len(reps) - len(ok),
                })
        return rows

    def median(self, method, split="test") -> float:
        vals = [r.mae[split] for r in self.reports[method] if not r.failed and split in r.mae]
        return float(np.median(vals)) if vals else float("nan")

    def success_rate(self, method="proposed") -> float:
        from subgroup_forge.discovery import estimation_accuracy
        return estimation_accuracy(self.reports[method])


def run_experiment(task, methods=METHODS, cfg: TrainConfig | None = None, threads: int = 1,
                   data=None) -> ExperimentResult:
    """All methods x all trials on one dataset drawn with ``cfg.seed``.

    Trial t of every method initialises from seed ``cfg.seed + t``. With
    ``threads > 1`` trials run in worker processes; results do not depend on
    the worker count.
    """
    cfg = cfg or TrainConfig()
    data = generate(task, cfg.seed) if data is None else data
    jobs = [(task, m, cfg, s, data) for m in methods for s in trial_seeds(cfg)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    reports = {m: [] for m in methods}
    for (_, m, _, _, _), rep in zip(jobs, results):
        reports[m].append(rep)
    return ExperimentResult(task, cfg, reports)


def metrics_csv(result: ExperimentResult, run_id: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["run_id", "method", "seed", "split", "epoch", "mae"])
    for method, reps in result.reports.items():
        for r in reps:
            for epoch, split, value in r.logged:
                writer.writerow([run_id, method, r.seed, split, epoch, repr(float(value))])
    return buf.getvalue()


def aggregate_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["method", "split", "mean", "std", "n_trials", "n_failed"])
    for row in result.aggregate():
        writer.writerow([row["method"], row["split"], repr(row["mean"]), repr(row["std"]),
                         row["n_trials"], row["n_failed"]])
    return buf.getvalue()
