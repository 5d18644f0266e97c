"""Command-line entry point: ``subgroup-forge <command> [--config PATH] [--out DIR] ...``.

Commands
--------
gen-data   draw the task's train/val/test splits and write them as CSV
train      run every configured method for ``trials`` seeds; metrics and checkpoints
estimate   train the learned-mask model at several training-set sizes and score
           the recovered index sets
verify     run the intertwining check and the invariance suite for a mask
report     collect earlier outputs into accuracy/MAE tables and mask heatmaps

Every command writes ``manifest.json`` into its output directory. Failures
exit nonzero and print a JSON error object to stderr (also saved as
``error.json`` when the output directory is usable).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from subgroup_forge import __version__, nets
from subgroup_forge import autodiff as ad
from subgroup_forge.datasets import (
    DigitSumTask,
    generate,
    load_dataset,
    save_dataset,
    task_from_json,
)
from subgroup_forge.discovery import IndexEstimate, accuracy_table_csv, estimation_accuracy
from subgroup_forge.groups import SubgroupSpec, Sk_on, Zk_on, check_intertwining, element_array
from subgroup_forge.heads import ComposedModel, MaskHead, build_ideal, mask_to_pgm
from subgroup_forge.training import (
    METHODS,
    TrainConfig,
    aggregate_csv,
    metrics_csv,
    run_experiment,
)

SCHEMA_VERSION = 1
COMMANDS = ("gen-data", "train", "estimate", "verify", "report")
TOP_LEVEL_KEYS = {"schema_version", "task", "methods", "train", "seed", "dataset", "sizes", "verify", "report"}
DEFAULT_TASK = {"kind": "polynomial", "n": 16, "k": 4}


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingDataError(FileNotFoundError):
    pass


# ----------------------------------------------------------------------------
# config

def _expect(obj, key, kinds, where, required=False):
    field = f"{where}.{key}" if where else key
    if key not in obj:
        if required:
            raise ConfigError(field, "required field is missing")
        return None
    value = obj[key]
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(field, f"expected {_kind_names(kinds)}, got boolean")
    if not isinstance(value, kinds):
        raise ConfigError(field, f"expected {_kind_names(kinds)}, got {type(value).__name__}")
    return value


def _kind_names(kinds):
    names = {int: "integer", float: "number", str: "string", list: "array", dict: "object", bool: "boolean"}
    return " or ".join(names.get(k, k.__name__) for k in kinds)


def _parse_task(raw):
    _expect({"task": raw}, "task", (dict,), "")
    for key in ("n", "k", "n_train", "n_val", "n_test", "glyph_dim"):
        _expect(raw, key, (int,), "task")
    kind = _expect(raw, "kind", (str,), "task") or "polynomial"
    if kind not in ("polynomial", "digitsum"):
        raise ConfigError("task.kind", f"unknown task kind {kind!r}")
    try:
        return task_from_json(raw)
    except TypeError as exc:
        raise ConfigError("task", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("task", str(exc)) from None


def _parse_train(raw):
    if raw is None:
        return TrainConfig()
    types = {"epochs": (int,), "lr": (int, float), "batch_size": (int, type(None)), "loss": (str,),
             "seed": (int,), "l1_penalty": (int, float), "trials": (int,), "log_every": (int,),
             "audit_every": (int,), "arch": (dict,)}
    for key in raw:
        if key not in types:
            raise ConfigError(f"train.{key}", "unknown field")
        _expect(raw, key, types[key], "train")
    try:
        return TrainConfig.from_json(raw)
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None


def load_config(path):
    """Parse and validate a JSON run config; a missing path yields the defaults."""
    if path is None:
        raw = {"schema_version": SCHEMA_VERSION}
    else:
        p = Path(path)
        if not p.is_file():
            raise MissingDataError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    version = _expect(raw, "schema_version", (int,), "", required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}, expected {SCHEMA_VERSION}")
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(key, "unknown field")
    cfg = dict(raw)
    cfg["task"] = _parse_task(raw.get("task", DEFAULT_TASK))
    cfg["task_given"] = "task" in raw
    cfg["train"] = _parse_train(raw.get("train"))
    methods = _expect(raw, "methods", (list,), "")
    if methods is None:
        methods = list(METHODS)
    for i, m in enumerate(methods):
        if m not in METHODS:
            raise ConfigError(f"methods[{i}]", f"unknown method {m!r}; choose from {list(METHODS)}")
    cfg["methods"] = methods
    seed = _expect(raw, "seed", (int,), "")
    if seed is not None:
        cfg["train"].seed = seed
    sizes = _expect(raw, "sizes", (list,), "")
    if sizes is not None and not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in sizes):
        raise ConfigError("sizes", "expected an array of positive integers")
    cfg["sizes"] = sizes or [16, 32, 64]
    _expect(raw, "dataset", (str,), "")
    _expect(raw, "verify", (dict,), "")
    _expect(raw, "report", (dict,), "")
    return cfg


def _resolve_threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("SUBGROUP_FORGE_THREADS")
    if env is None or env == "":
        return 1
    try:
        value = int(env)
    except ValueError:
        raise ConfigError("SUBGROUP_FORGE_THREADS", f"expected an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("SUBGROUP_FORGE_THREADS", "must be >= 1")
    return value


# ----------------------------------------------------------------------------
# output helpers

class Output:
    """Single writer for one command's artifacts; tracks files for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write_text(self, rel, text):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="")
        self.files.append(str(rel))
        return path

    def write_bytes(self, rel, blob):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
        self.files.append(str(rel))
        return path

    def write_json(self, rel, obj):
        return self.write_text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def adopt(self, rel):
        self.files.append(str(rel))

    def manifest(self, command, config, extra=None):
        digests = {}
        for rel in sorted(set(self.files)):
            digests[rel] = hashlib.sha256((self.root / rel).read_bytes()).hexdigest()
        body = {
            "command": command,
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "config": _config_to_json(config),
            "files": digests,
        }
        if extra:
            body.update(extra)
        (self.root / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config_to_json(cfg):
    out = {k: v for k, v in cfg.items() if k not in ("task", "train", "task_given")}
    out["task"] = cfg["task"].to_json()
    out["train"] = cfg["train"].to_json()
    return out


def _matrix_csv(M) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    for row in np.atleast_2d(M):
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _load_data(cfg):
    task, seed = cfg["task"], cfg["train"].seed
    if cfg.get("dataset"):
        directory = Path(cfg["dataset"])
        try:
            stored_task, data, stored_seed = load_dataset(directory)
        except FileNotFoundError as exc:
            raise MissingDataError(f"dataset not found: {directory} ({exc})") from None
        if cfg["task_given"] and stored_task != task:
            raise ConfigError("dataset", f"dataset at {directory} was generated for a different task")
        return stored_task, data
    return task, generate(task, seed)


# ----------------------------------------------------------------------------
# commands

def cmd_gen(cfg, out: Output, args):
    task = cfg["task"]
    data = generate(task, cfg["train"].seed)
    save_dataset(out.root / "dataset", task, data, cfg["train"].seed)
    for name in list(data) + [None]:
        out.adopt(f"dataset/{name}.csv" if name else "dataset/dataset.json")
    print(f"wrote {task.label} dataset ({', '.join(f'{k}={len(v)}' for k, v in data.items())}) to {out.root / 'dataset'}")
    return {}


def _save_trial(out: Output, prefix, rep, run_id):
    tag = f"{rep.method}_seed{rep.seed}"
    out.write_json(f"{prefix}reports/{tag}.json", rep.to_json())
    if rep.state is not None:
        nets.save_state(out.root / f"{prefix}checkpoints/{tag}", rep.state,
                        {"method": rep.method, "seed": rep.seed, "run_id": run_id})
        out.adopt(f"{prefix}checkpoints/{tag}/manifest.json")
    if rep.M is not None:
        out.write_text(f"{prefix}masks/{tag}_M.csv", _matrix_csv(rep.M))
        out.write_bytes(f"{prefix}masks/{tag}_M.pgm", mask_to_pgm(rep.M))
        if rep.L is not None:
            out.write_text(f"{prefix}masks/{tag}_L.csv", _matrix_csv(rep.L))


def cmd_train(cfg, out: Output, args):
    task, data = _load_data(cfg)
    tcfg = cfg["train"]
    result = run_experiment(task, cfg["methods"], tcfg, threads=args.threads, data=data)
    run_id = f"{task.label}-N{task.n_train}-s{tcfg.seed}"
    out.write_text("metrics.csv", metrics_csv(result, run_id))
    out.write_text("aggregate.csv", aggregate_csv(result))
    for reps in result.reports.values():
        for rep in reps:
            _save_trial(out, "", rep, run_id)
    summary = {m: result.median(m) for m in cfg["methods"]}
    out.write_json("summary.json", {"task": task.to_json(), "median_test_mae": summary,
                                    "success_rate": result.success_rate() if "proposed" in cfg["methods"] else None})
    for m, v in summary.items():
        print(f"{m}: median test MAE {v:.6g}")
    return {"run_id": run_id}


def cmd_estimate(cfg, out: Output, args):
    base = cfg["task"]
    tcfg = cfg["train"]
    rows = {}
    record = []
    for size in cfg["sizes"]:
        task = _with_train_size(base, size)
        result = run_experiment(task, ["proposed"], tcfg, threads=args.threads)
        run_id = f"{task.label}-N{size}-s{tcfg.seed}"
        prefix = f"N{size}/"
        out.write_text(prefix + "metrics.csv", metrics_csv(result, run_id))
        for rep in result.reports["proposed"]:
            _save_trial(out, prefix, rep, run_id)
            record.append({"label": task.label, "N": size, "seed": rep.seed, "success": rep.success,
                           "failed": rep.failed,
                           "estimate": None if rep.estimate is None else rep.estimate.to_json()})
        rate = estimation_accuracy(result.reports["proposed"])
        rows.setdefault(task.label, {})[size] = rate
        print(f"{task.label} N={size}: estimation accuracy {rate:g}%")
    out.write_json("estimates.json", {"task": base.to_json(), "trials": record})
    out.write_text("accuracy.csv", accuracy_table_csv(rows, cfg["sizes"]))
    return {}


def _with_train_size(task, size):
    spec = task.to_json()
    spec["n_train"] = size
    spec["kind"] = task.kind
    return task_from_json(spec)


def _verify_setup(cfg):
    """(H, G, M, backbone factory) from the ``verify`` block or from the task."""
    task = cfg["task"]
    block = cfg.get("verify") or {}
    try:
        H = SubgroupSpec.from_json(block["H"]) if "H" in block else task.group
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("verify.H", str(exc)) from None
    sk = isinstance(task, DigitSumTask) or H.family in ("S_full", "Sk")
    n = task.n
    if "G" in block:
        try:
            G = SubgroupSpec.from_json(block["G"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("verify.G", str(exc)) from None
    else:
        G = Sk_on(range(n, 2 * n), 2 * n) if sk else Zk_on(range(n), n)
    M = block.get("M", "ideal")
    if M == "ideal":
        if sk:
            ideal = build_ideal(n, len(H.indices), "Sk", H.indices)
            matrix = np.vstack([np.eye(n) - ideal.M, ideal.M])
        else:
            ideal = build_ideal(n, len(H.indices), "ZD", H.indices)
            matrix = ideal.M
    else:
        try:
            matrix = np.asarray(M, dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError("verify.M", "expected \"ideal\" or a numeric matrix") from None
        if matrix.ndim != 2:
            raise ConfigError("verify.M", "expected a 2-D matrix")
        ideal = None
    probes = block.get("probes", 32)
    if not isinstance(probes, int) or isinstance(probes, bool) or probes < 1:
        raise ConfigError("verify.probes", "expected a positive integer")
    return H, G, matrix, ideal, probes


def _invariance_suite(cfg, ideal, H, seed, samples=100):
    task = cfg["task"]
    rng = np.random.default_rng(seed)
    n = task.n
    head = MaskHead.from_ideal(ideal)
    if ideal.variant == "Sk":
        backbone = nets.PassThroughPoolNet(rng, n)
    else:
        backbone = nets.CyclicInvariantNet(rng, n, pass_dim=n)
    model = ComposedModel(head, backbone)
    X = rng.uniform(size=(samples, n))
    base = model.predict(X)
    return max(float(np.abs(model.predict(X[:, g]) - base).max()) for g in element_array(H))


def cmd_verify(cfg, out: Output, args):
    H, G, matrix, ideal, probes = _verify_setup(cfg)
    rep = check_intertwining(H, G, matrix, probes=probes, seed=cfg["train"].seed)
    body = {"intertwining_check": rep.to_json(), "summary": rep.summary()}
    print(rep.summary())
    ok = rep.passed
    if ideal is not None and H.n == cfg["task"].n:
        gap = _invariance_suite(cfg, ideal, H, cfg["train"].seed)
        body["invariance_max_gap"] = gap
        body["invariance_pass"] = gap <= 1e-9
        print(f"invariance suite: max |f(g.x) - f(x)| = {gap:.3g} ({'PASS' if gap <= 1e-9 else 'FAIL'})")
        ok = ok and gap <= 1e-9
    out.write_json("verify.json", body)
    out.write_text("M.csv", _matrix_csv(matrix))
    return {"passed": ok}


def cmd_report(cfg, out: Output, args):
    block = cfg.get("report") or {}
    inputs = block.get("inputs", [str(out.root)])
    if not isinstance(inputs, list) or not all(isinstance(p, str) for p in inputs):
        raise ConfigError("report.inputs", "expected an array of directory paths")
    threshold_ok = True
    rows: dict[str, dict[int, float]] = {}
    sizes = set()
    mae_rows = []
    found = False
    for directory in map(Path, inputs):
        if not directory.is_dir():
            raise MissingDataError(f"report input directory not found: {directory}")
        est_path = directory / "estimates.json"
        if est_path.is_file():
            found = True
            blob = json.loads(est_path.read_text(encoding="utf-8"))
            groups: dict[tuple[str, int], list[bool]] = {}
            for t in blob["trials"]:
                groups.setdefault((t["label"], t["N"]), []).append(bool(t["success"]))
                if t["estimate"] is not None:
                    est = IndexEstimate.from_json(t["estimate"])
                    m_csv = directory / f"N{t['N']}" / "masks" / f"proposed_seed{t['seed']}_M.csv"
                    if m_csv.is_file():
                        M = ad.matrix_from_csv(m_csv.read_text(encoding="utf-8"))
                        name = f"heatmaps/{t['label'].replace(':', '_')}_N{t['N']}_seed{t['seed']}.pgm"
                        out.write_bytes(name, mask_to_pgm(M))
                        cols = np.abs(M).sum(axis=0)
                        if t["success"] and set(np.flatnonzero(cols > cols.mean())) != set(est.true_indices):
                            threshold_ok = False
            for (label, size), flags in groups.items():
                rows.setdefault(label, {})[size] = 100.0 * sum(flags) / len(flags)
                sizes.add(size)
        agg_path = directory / "aggregate.csv"
        if agg_path.is_file():
            found = True
            summary = json.loads((directory / "summary.json").read_text(encoding="utf-8"))
            label = task_from_json(summary["task"]).label
            for rec in csv.DictReader(io.StringIO(agg_path.read_text(encoding="utf-8"))):
                if rec["split"] == "test":
                    mae_rows.append((rec["method"], label, float(rec["mean"]), float(rec["std"]),
                                     summary["median_test_mae"].get(rec["method"])))
    if not found:
        raise MissingDataError(f"no estimates.json or aggregate.csv under {', '.join(inputs)}")
    if rows:
        ordered = sorted(sizes) if sizes else cfg["sizes"]
        out.write_text("accuracy_table.csv", accuracy_table_csv(rows, ordered))
        print(accuracy_table_csv(rows, ordered).replace("\r\n", "\n"), end="")
    if mae_rows:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["method", "task", "mean_x1e-2", "std_x1e-2", "median_x1e-2"])
        for method, label, mean, std, median in mae_rows:
            writer.writerow([method, label, f"{100 * mean:.2f}", f"{100 * std:.2f}",
                             "" if median is None else f"{100 * median:.2f}"])
        out.write_text("mae_table.csv", buf.getvalue())
        print(buf.getvalue().replace("\r\n", "\n"), end="")
    return {"heatmap_columns_match": threshold_ok}


HANDLERS = {"gen-data": cmd_gen, "train": cmd_train, "estimate": cmd_estimate, "verify": cmd_verify,
            "report": cmd_report}


# ----------------------------------------------------------------------------
# entry point

def build_parser():
    parser = argparse.ArgumentParser(prog="subgroup-forge", description="Learn and verify subgroup-invariant models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config (schema_version required)")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--seed", type=int, help="seed base (overrides the config)")
        p.add_argument("--threads", type=int, help="worker processes across trials "
                                                   "(default: $SUBGROUP_FORGE_THREADS or 1)")
        p.add_argument("--trials", type=int, help="trials per method (overrides the config)")
    return parser


def _error_report(kind, exc, out_dir=None):
    body = {"error": {"type": kind, "message": str(exc)}}
    if isinstance(exc, ConfigError):
        body["error"]["field"] = exc.field
    text = json.dumps(body, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["train"].seed = args.seed
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("--trials", "must be >= 1")
            cfg["train"].trials = args.trials
        args.threads = _resolve_threads(args.threads)
        if args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        out = Output(args.out)
        extra = HANDLERS[args.command](cfg, out, args) or {}
        out.manifest(args.command, cfg, extra)
    except ConfigError as exc:
        _error_report("config_error", exc, args.out)
        return 2
    except MissingDataError as exc:
        _error_report("missing_data", exc, args.out)
        return 3
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured report
        _error_report(type(exc).__name__, exc, args.out)
        return 1
    if extra.get("passed") is False:
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
