"""Dataset parsing, multi-label to multi-task conversion, normalization,
train/test partitions and lambda selection by cross-validation.

Input format, one example per line::

    a,b 1:0.5 3:-1.0   # optional trailing comment

The optional leading field lists the example's class tokens (comma
separated, no spaces, may be empty); then come ``index:value`` pairs with
1-based ascending indices. Missing indices are 0. A line ``#d=<int>`` pins
the feature dimension, otherwise it is the largest index seen.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import admm
from .errors import DataFormatError, DegenerateTaskError, ValidationError
from .metrics import evaluate, predict_labels
from .model import LossKind, MultiTaskDataset, SmtlConfig, TaskDataset, make_rng

N_PARTITIONS = 10
TRAIN_FRACTION = 0.6
MAX_REDRAWS = 20

# seed-derivation keys, one per randomized purpose
KEY_SPLIT = 1
KEY_FOLDS = 2
KEY_RESAMPLE = 3


@dataclass(frozen=True)
class MultiLabelDataset:
    features: np.ndarray
    label_sets: tuple
    class_names: tuple

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ValidationError(f"features must be a non-empty n x d matrix, got shape {X.shape}")
        if len(self.label_sets) != X.shape[0]:
            raise ValidationError(f"{len(self.label_sets)} label sets for {X.shape[0]} rows")
        known = set(self.class_names)
        for k, labs in enumerate(self.label_sets):
            unknown = set(labs) - known
            if unknown:
                raise ValidationError(f"row {k} uses undeclared classes {sorted(unknown)}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "label_sets", tuple(frozenset(s) for s in self.label_sets))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_samples(self):
        return self.features.shape[0]


def _parse_line(raw, path, lineno):
    line = raw.split("#", 1)[0]
    if not line.strip():
        return None
    tokens = line.split()
    labels = []
    if line[0] not in " \t" and ":" not in tokens[0]:
        labels = [t for t in tokens[0].split(",") if t]
        if len(labels) != len(set(labels)):
            raise DataFormatError(f"repeated class token in {tokens[0]!r}", path, lineno)
        tokens = tokens[1:]
    feats = {}
    last = 0
    for tok in tokens:
        idx, sep, val = tok.partition(":")
        if not sep:
            raise DataFormatError(f"expected index:value, got {tok!r}", path, lineno)
        try:
            i = int(idx)
            v = float(val)
        except ValueError:
            raise DataFormatError(f"malformed pair {tok!r}", path, lineno) from None
        if i < 1:
            raise DataFormatError(f"feature index must be >= 1, got {i}", path, lineno)
        if i in feats:
            raise DataFormatError(f"duplicate feature index {i}", path, lineno)
        if i < last:
            raise DataFormatError(f"feature indices must be ascending ({i} after {last})", path, lineno)
        if not math.isfinite(v):
            raise DataFormatError(f"non-finite value for index {i}", path, lineno)
        feats[i] = v
        last = i
    return labels, feats


def parse_multilabel(path) -> MultiLabelDataset:
    """Read a multi-label file; classes are ordered by first appearance."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    declared = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if stripped.startswith("#d="):
            try:
                declared = int(stripped[3:].split()[0])
            except (ValueError, IndexError):
                raise DataFormatError(f"bad dimension line {stripped!r}", path, lineno) from None
            if declared < 1:
                raise DataFormatError(f"declared d must be >= 1, got {declared}", path, lineno)
            continue
        parsed = _parse_line(raw, path, lineno)
        if parsed is not None:
            rows.append((lineno, *parsed))
    if not rows:
        raise DataFormatError("no examples", path)
    seen = max((max(f) for _, _, f in rows if f), default=0)
    if declared is not None and seen > declared:
        ln = next(n for n, _, f in rows if f and max(f) > declared)
        raise DataFormatError(f"index {seen} exceeds declared d={declared}", path, ln)
    d = declared if declared is not None else seen
    if d < 1:
        raise DataFormatError("no features and no #d= line", path)
    X = np.zeros((len(rows), d))
    classes = {}
    for k, (_, labs, feats) in enumerate(rows):
        for i, v in feats.items():
            X[k, i - 1] = v
        for c in labs:
            classes.setdefault(c, len(classes))
    return MultiLabelDataset(X, tuple(labs for _, labs, _ in rows), tuple(classes))


def parse_dense_csv(path) -> MultiLabelDataset:
    """Dense CSV with a header; columns named ``label:<class>`` hold 0/1 (or -1/+1)
    membership, every other column is a feature."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    if len(rows) < 2:
        raise DataFormatError("need a header and at least one row", path)
    header = [h.strip() for h in rows[0]]
    lab_cols = [j for j, h in enumerate(header) if h.startswith("label:")]
    feat_cols = [j for j, h in enumerate(header) if not h.startswith("label:")]
    names = [header[j][len("label:"):] for j in lab_cols]
    X = np.zeros((len(rows) - 1, len(feat_cols)))
    sets = []
    for k, row in enumerate(rows[1:]):
        lineno = k + 2
        if len(row) != len(header):
            raise DataFormatError(f"{len(row)} fields, header has {len(header)}", path, lineno)
        try:
            X[k] = [float(row[j]) for j in feat_cols]
            member = [float(row[j]) > 0 for j in lab_cols]
        except ValueError:
            raise DataFormatError("non-numeric field", path, lineno) from None
        sets.append([n for n, on in zip(names, member) if on])
    return MultiLabelDataset(X, tuple(sets), tuple(names))


def write_multilabel(path, ml: MultiLabelDataset):
    """Inverse of :func:`parse_multilabel` (zeros omitted, dimension pinned)."""
    lines = [f"#d={ml.features.shape[1]}"]
    order = {c: i for i, c in enumerate(ml.class_names)}
    for x, labs in zip(ml.features, ml.label_sets):
        head = ",".join(sorted(labs, key=order.__getitem__))
        pairs = " ".join(f"{i + 1}:{v!r}" for i, v in enumerate(x.tolist()) if v != 0)
        lines.append(f"{head} {pairs}".rstrip() if head else f" {pairs}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n")


def to_tasks(ml: MultiLabelDataset) -> MultiTaskDataset:
    """One binary task per class; all tasks share the feature matrix."""
    if not ml.class_names:
        raise ValidationError("dataset declares no classes")
    tasks = []
    for c in ml.class_names:
        y = np.array([1.0 if c in labs else -1.0 for labs in ml.label_sets])
        tasks.append(TaskDataset(ml.features, y, c))
    return MultiTaskDataset(tuple(tasks))


def load_dataset(path) -> MultiTaskDataset:
    """Load a file (``.csv`` dense, anything else multi-label) or a directory.

    A directory holds one multi-label file per task (sorted by name); a row
    is positive for that task iff its label field is non-empty. Tasks then
    need not share rows.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise ValidationError(f"dataset directory {path} has no task files")
        tasks = []
        for f in files:
            ml = parse_multilabel(f) if f.suffix != ".csv" else parse_dense_csv(f)
            y = np.array([1.0 if labs else -1.0 for labs in ml.label_sets])
            tasks.append(TaskDataset(ml.features, y, f.stem))
        return MultiTaskDataset(tuple(tasks))
    if path.suffix.lower() == ".csv":
        return to_tasks(parse_dense_csv(path))
    return to_tasks(parse_multilabel(path))


@dataclass(frozen=True)
class NormalizationParams:
    method: str
    center: np.ndarray
    scale: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.center) * self.scale

    def apply_dataset(self, data: MultiTaskDataset) -> MultiTaskDataset:
        return MultiTaskDataset(tuple(
            TaskDataset(self.apply(t.features), t.labels, t.task_name) for t in data.tasks))


NORMALIZATIONS = ("minmax_pm1", "zscore")


def fit_normalization(X, method="minmax_pm1") -> NormalizationParams:
    X = np.asarray(X, dtype=float)
    if method == "minmax_pm1":
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = hi - lo
        center = (hi + lo) / 2.0
        scale = np.divide(2.0, span, out=np.zeros_like(span), where=span > 0)
    elif method == "zscore":
        center = X.mean(axis=0)
        std = X.std(axis=0)
        scale = np.divide(1.0, std, out=np.zeros_like(std), where=std > 0)
    else:
        raise ValidationError(f"unknown normalization {method!r}; expected one of {NORMALIZATIONS}")
    return NormalizationParams(method, center, scale)


def _shared_rows(data: MultiTaskDataset) -> bool:
    first = data.tasks[0].features
    return all(t.features is first or np.array_equal(t.features, first) for t in data.tasks[1:])


def normalize(data: MultiTaskDataset, method="minmax_pm1", train_rows=None):
    """Normalize every task's features with statistics from the training rows.

    ``train_rows`` is one index array per task (or ``None`` for all rows).
    Returns ``(normalized_data, params)``.
    """
    if train_rows is not None and len(train_rows) != data.n_tasks:
        raise ValidationError(f"train_rows has {len(train_rows)} entries for {data.n_tasks} tasks")
    if _shared_rows(data) and (train_rows is None or all(
            np.array_equal(train_rows[0], r) for r in train_rows[1:])):
        # one shared matrix: statistics over its rows, not m stacked copies
        X = data.tasks[0].features
        if train_rows is not None:
            X = X[np.asarray(train_rows[0], dtype=int)]
    elif train_rows is None:
        X = np.vstack([t.features for t in data.tasks])
    else:
        X = np.vstack([t.features[np.asarray(r, dtype=int)] for t, r in zip(data.tasks, train_rows)])
    params = fit_normalization(X, method)
    return params.apply_dataset(data), params


@dataclass(frozen=True)
class SplitPlan:
    train_indices: tuple
    test_indices: tuple
    seed: int

    @property
    def partitions(self):
        return len(self.train_indices)

    def to_record(self):
        return {"seed": self.seed,
                "partitions": [{"train": [int(i) for i in tr], "test": [int(i) for i in te]}
                               for tr, te in zip(self.train_indices, self.test_indices)]}


def n_train(n: int) -> int:
    # round half up, not to even
    return int(math.floor(TRAIN_FRACTION * n + 0.5))


def make_splits(n: int, seed: int, partitions: int = N_PARTITIONS, key: int = 0) -> SplitPlan:
    """``partitions`` independent 60/40 shuffles of ``range(n)``."""
    if n < 5:
        raise ValidationError(f"need at least 5 examples to split, got {n}")
    if partitions < 1:
        raise ValidationError(f"partitions must be >= 1, got {partitions}")
    k = n_train(n)
    train, test = [], []
    for p in range(partitions):
        perm = make_rng(seed, KEY_SPLIT, key, p).permutation(n)
        train.append(np.sort(perm[:k]))
        test.append(np.sort(perm[k:]))
    return SplitPlan(tuple(train), tuple(test), int(seed))


def lambda_grid() -> list:
    """The 58 candidate trade-off values, ascending."""
    raw = ([1e-3 * i for i in range(1, 11)] + [1e-2 * i for i in range(1, 11)]
           + [1e-1 * i for i in range(1, 11)] + [2.0 * i for i in range(1, 11)]
           + [40.0 * i for i in range(1, 21)])
    # products like 3 * 0.1 carry rounding noise; snap to the shortest decimal
    return sorted({float(f"{v:.12g}") for v in raw})


def split_tasks(data: MultiTaskDataset, rows) -> MultiTaskDataset:
    """Per-task row subsets; ``rows`` holds one index array per task."""
    return MultiTaskDataset(tuple(t.subset(r) for t, r in zip(data.tasks, rows)))


def partition_rows(data: MultiTaskDataset, seed: int, partitions: int = N_PARTITIONS):
    """Per-partition (train_rows, test_rows), each a list with one array per task.

    Tasks that share one feature matrix share one plan; otherwise each task
    gets its own plan.
    """
    if _shared_rows(data):
        plan = make_splits(data.tasks[0].n_samples, seed, partitions)
        plans = [plan] * data.n_tasks
    else:
        plans = [make_splits(t.n_samples, seed, partitions, key=i + 1)
                 for i, t in enumerate(data.tasks)]
    out = []
    for p in range(partitions):
        out.append(([pl.train_indices[p] for pl in plans], [pl.test_indices[p] for pl in plans]))
    return plans, out


# ---- cross-validation -------------------------------------------------------

def _fold_ok(y, train_mask, kind):
    yt = y[train_mask]
    n_pos = int(np.sum(yt > 0))
    if kind is LossKind.F1:
        return n_pos > 0
    if kind is LossKind.AUC:
        return 0 < n_pos < yt.shape[0]
    return yt.shape[0] > 0


def _random_folds(n, folds, rng):
    assign = np.empty(n, dtype=int)
    assign[rng.permutation(n)] = np.arange(n) % folds
    return assign


def _stratified_folds(y, folds, rng):
    assign = np.empty(y.shape[0], dtype=int)
    offset = 0
    for cls in (1.0, -1.0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        assign[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return assign


def make_folds(data: MultiTaskDataset, folds: int, loss_kind, seed: int):
    """Fold assignment per task that keeps every training portion usable.

    Random folds are re-drawn up to 20 times; after that the assignment is
    stratified by class. Raises :class:`DegenerateTaskError` naming the tasks
    that no assignment can repair.
    """
    kind = LossKind(loss_kind)
    shared = _shared_rows(data)
    n_list = [t.n_samples for t in data.tasks]
    if min(n_list) < folds:
        raise ValidationError(f"{folds} folds need at least {folds} rows per task, got {min(n_list)}")

    def ok(assign):
        return [all(_fold_ok(t.labels, a != f, kind) for f in range(folds))
                for t, a in zip(data.tasks, assign)]

    rng = make_rng(seed, KEY_FOLDS)
    for _ in range(MAX_REDRAWS):
        if shared:
            a = _random_folds(n_list[0], folds, rng)
            assign = [a] * data.n_tasks
        else:
            assign = [_random_folds(n, folds, rng) for n in n_list]
        if all(ok(assign)):
            return assign
    # stratify per task (tasks no longer share fold membership)
    assign = [_stratified_folds(t.labels, folds, rng) for t in data.tasks]
    status = ok(assign)
    if not all(status):
        bad = [t.task_name for t, s in zip(data.tasks, status) if not s]
        raise DegenerateTaskError(
            f"tasks {bad} cannot be split into {folds} folds whose training parts support "
            f"the {kind.value} loss", bad[0])
    return assign


def validation_score(W, data: MultiTaskDataset, loss_kind) -> float:
    """Model-selection score matched to the training loss (higher is better)."""
    kind = LossKind(loss_kind)
    if kind is LossKind.HAMMING:
        hits = total = 0
        for i, t in enumerate(data.tasks):
            pred = predict_labels(t.features @ W[:, i])
            hits += int(np.sum(pred == t.labels))
            total += t.n_samples
        return 100.0 * hits / total
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = evaluate(W, data)
    return rep.macro_f1 if kind is LossKind.F1 else rep.average_auc


@dataclass
class CVResult:
    best_lambda: float
    grid: list
    mean_scores: list


def cross_validate(train: MultiTaskDataset, template: SmtlConfig, folds: int = 10,
                   grid=None, seed=None, threads=None) -> CVResult:
    """Pick lambda by k-fold cross-validation on ``train``.

    The fold score is the metric matching the loss (macro F1, average AUC or
    accuracy); ties go to the smaller lambda. A single-value grid returns
    immediately.
    """
    grid = lambda_grid() if grid is None else sorted(float(v) for v in grid)
    if not grid:
        raise ValidationError("lambda grid is empty")
    if len(grid) == 1:
        return CVResult(grid[0], grid, [math.nan])
    seed = template.seed if seed is None else seed
    kind = template.loss.kind
    assign = make_folds(train, folds, kind, seed)

    fold_data = []
    for f in range(folds):
        tr = split_tasks(train, [np.flatnonzero(a != f) for a in assign])
        va = split_tasks(train, [np.flatnonzero(a == f) for a in assign])
        fold_data.append((tr, va))

    def unit(job):
        lam, f = job
        tr, va = fold_data[f]
        W, _ = admm.train(tr, template.with_(lam=lam), threads=inner_threads)
        return validation_score(W, va, kind)

    jobs = [(lam, f) for lam in grid for f in range(folds)]
    workers = threads if threads is not None else admm.thread_count()
    # parallelism goes to the (lambda, fold) units; column solves run serially
    inner_threads = 1 if workers > 1 else None
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            scores = list(pool.map(unit, jobs))
    else:
        scores = [unit(j) for j in jobs]
    scores = np.array(scores).reshape(len(grid), folds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = [float(np.nanmean(row)) if np.any(np.isfinite(row)) else -math.inf
                 for row in scores]
    best = 0
    for k in range(1, len(grid)):
        if means[k] > means[best]:
            best = k
    return CVResult(grid[best], grid, means)
