"""Domain types, configuration and model persistence."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ModelFormatError, ValidationError

MODEL_HEADER = "SMTL-MODEL v1"


class Regularizer(str, enum.Enum):
    L11 = "l11"
    L21 = "l21"
    TRACE = "trace"


class LossKind(str, enum.Enum):
    F1 = "f1"
    AUC = "auc"
    HAMMING = "hamming"


@dataclass(frozen=True)
class LossMetric:
    """Task loss used inside the structured hinge.

    ``beta`` only matters for the F-score loss.
    """

    kind: LossKind
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValidationError(f"beta must be positive, got {self.beta!r}")


@dataclass(frozen=True)
class TaskDataset:
    features: np.ndarray
    labels: np.ndarray
    task_name: str = "task"

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float).ravel()
        if X.ndim != 2:
            raise ValidationError(f"{self.task_name}: features must be 2-d, got shape {X.shape}")
        n, d = X.shape
        if n == 0 or d == 0:
            raise ValidationError(f"{self.task_name}: empty feature matrix {X.shape}")
        if y.shape[0] != n:
            raise ValidationError(
                f"{self.task_name}: {y.shape[0]} labels for {n} feature rows")
        if not np.all((y == 1) | (y == -1)):
            raise ValidationError(f"{self.task_name}: labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise ValidationError(f"{self.task_name}: non-finite feature values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.labels > 0))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.labels < 0))

    def subset(self, rows) -> "TaskDataset":
        rows = np.asarray(rows, dtype=int)
        return TaskDataset(self.features[rows], self.labels[rows], self.task_name)


@dataclass(frozen=True)
class MultiTaskDataset:
    tasks: tuple

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if len(tasks) == 0:
            raise ValidationError("a multi-task dataset needs at least one task")
        d = tasks[0].n_features
        for t in tasks:
            if t.n_features != d:
                raise ValidationError(
                    f"task {t.task_name!r} has d={t.n_features}, expected {d}")
        object.__setattr__(self, "tasks", tasks)

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].n_features

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def task_names(self) -> list:
        return [t.task_name for t in self.tasks]

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> TaskDataset:
        return self.tasks[i]


STOP_RULES = ("primal_dual", "primal")


@dataclass(frozen=True)
class SmtlConfig:
    """Solver configuration.

    ``lam`` is the hinge trade-off, ``mu`` the ADMM penalty. Tolerances are
    the outer infeasibility bound (max-norm of S - W) and the inner
    duality-gap bound.
    """

    regularizer: Regularizer = Regularizer.L21
    loss: LossMetric = field(default_factory=lambda: LossMetric(LossKind.F1))
    lam: float = 1.0
    mu: float = 1.0
    outer_tol: float = 1e-4
    outer_max_iter: int = 200
    inner_tol: float = 1e-5
    inner_max_iter: int = 5000
    seed: int = 0
    warm_start: bool = False
    # geometric penalty schedule (rho, mu_max); None keeps mu constant
    mu_schedule: Optional[tuple] = None
    # "primal_dual" also requires mu * ||S_t - S_{t-1}||_inf <= outer_tol;
    # "primal" stops on ||S - W||_inf alone
    stop_rule: str = "primal_dual"

    def __post_init__(self):
        object.__setattr__(self, "regularizer", Regularizer(self.regularizer))
        if not isinstance(self.loss, LossMetric):
            object.__setattr__(self, "loss", LossMetric(LossKind(self.loss)))
        for name in ("lam", "mu", "outer_tol", "inner_tol"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValidationError(f"{name} must be a positive real, got {val!r}")
        for name in ("outer_max_iter", "inner_max_iter"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ValidationError(f"{name} must be an integer >= 1, got {val!r}")
            object.__setattr__(self, name, int(val))
        object.__setattr__(self, "seed", int(self.seed))
        if self.stop_rule not in STOP_RULES:
            raise ValidationError(f"stop_rule must be one of {STOP_RULES}, got {self.stop_rule!r}")
        if self.mu_schedule is not None:
            rho, mu_max = (float(v) for v in self.mu_schedule)
            if rho < 1 or mu_max < self.mu:
                raise ValidationError(
                    f"mu_schedule needs rho >= 1 and mu_max >= mu, got {self.mu_schedule!r}")
            object.__setattr__(self, "mu_schedule", (rho, mu_max))

    def with_(self, **changes) -> "SmtlConfig":
        return replace(self, **changes)

    def to_record(self) -> dict:
        rec = {
            "regularizer": self.regularizer.value,
            "loss": self.loss.kind.value,
            "beta": repr(float(self.loss.beta)),
            "lambda": repr(float(self.lam)),
            "mu": repr(float(self.mu)),
            "outer_tol": repr(float(self.outer_tol)),
            "outer_max_iter": str(self.outer_max_iter),
            "inner_tol": repr(float(self.inner_tol)),
            "inner_max_iter": str(self.inner_max_iter),
            "seed": str(self.seed),
            "warm_start": "1" if self.warm_start else "0",
            "mu_schedule": ("none" if self.mu_schedule is None
                            else "{!r},{!r}".format(*self.mu_schedule)),
            "stop_rule": self.stop_rule,
        }
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "SmtlConfig":
        try:
            sched = rec.get("mu_schedule", "none")
            return cls(
                regularizer=Regularizer(rec["regularizer"]),
                loss=LossMetric(LossKind(rec["loss"]), float(rec.get("beta", 1.0))),
                lam=float(rec["lambda"]),
                mu=float(rec["mu"]),
                outer_tol=float(rec["outer_tol"]),
                outer_max_iter=int(rec["outer_max_iter"]),
                inner_tol=float(rec["inner_tol"]),
                inner_max_iter=int(rec["inner_max_iter"]),
                seed=int(rec.get("seed", 0)),
                warm_start=rec.get("warm_start", "0") == "1",
                mu_schedule=None if sched == "none" else tuple(
                    float(v) for v in sched.split(",")),
                stop_rule=rec.get("stop_rule", "primal_dual"),
            )
        except KeyError as exc:
            raise ModelFormatError(f"config record is missing key {exc}") from None
        except ValueError as exc:
            raise ModelFormatError(f"bad config record: {exc}") from None


@dataclass
class IterationRecord:
    iteration: int
    infeasibility: float
    inner_gap: float
    wall_time: float = 0.0
    dual_residual: float = math.inf


@dataclass
class SolveReport:
    outer_iterations: int = 0
    final_infeasibility: float = math.inf
    per_iteration: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "outer_iterations": self.outer_iterations,
            "final_infeasibility": self.final_infeasibility,
            "converged": self.converged,
            "per_iteration": [
                {"iteration": r.iteration, "infeasibility": r.infeasibility,
                 "dual_residual": r.dual_residual, "inner_gap": r.inner_gap,
                 "wall_time": r.wall_time}
                for r in self.per_iteration
            ],
        }


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Child generator for a named purpose; every random draw derives from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(keys)))


def save_model(W: np.ndarray, config: SmtlConfig, path) -> None:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValidationError(f"weight matrix must be 2-d, got shape {W.shape}")
    d, m = W.shape
    lines = [MODEL_HEADER, f"d={d} m={m}",
             " ".join(f"{k}={v}" for k, v in config.to_record().items())]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in W)
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write model file {path}: {exc.strerror or exc}") from exc


def load_model(path) -> tuple:
    """Read a model file; returns ``(W, config)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read model file {path}: {exc.strerror or exc}") from exc
    lines = text.splitlines()
    if len(lines) < 3 or lines[0].strip() != MODEL_HEADER:
        raise ModelFormatError(f"{path}: missing '{MODEL_HEADER}' header")
    try:
        shape = dict(tok.split("=", 1) for tok in lines[1].split())
        d, m = int(shape["d"]), int(shape["m"])
    except (KeyError, ValueError):
        raise ModelFormatError(f"{path}: malformed shape line {lines[1]!r}") from None
    if d < 1 or m < 1:
        raise ValidationError(f"{path}: declared shape d={d} m={m} must be positive")
    try:
        rec = dict(tok.split("=", 1) for tok in lines[2].split())
    except ValueError:
        raise ModelFormatError(f"{path}: malformed config line") from None
    config = SmtlConfig.from_record(rec)
    rows = [ln for ln in lines[3:] if ln.strip()]
    if len(rows) != d:
        raise ModelFormatError(f"{path}: declared d={d} but found {len(rows)} weight rows")
    W = np.empty((d, m))
    for i, ln in enumerate(rows):
        vals = ln.split(" ")
        if len(vals) != m:
            raise ModelFormatError(
                f"{path}: row {i + 1} has {len(vals)} values, expected m={m}")
        try:
            W[i] = [float(v) for v in vals]
        except ValueError:
            raise ModelFormatError(f"{path}: non-numeric value in row {i + 1}") from None
    return W, config


def predict(W: np.ndarray, task_index: int, features: Sequence[float]) -> float:
    """Real-valued score of one sample for one task; the label is its sign."""
    W = np.asarray(W, dtype=float)
    x = np.asarray(features, dtype=float).ravel()
    d, m = W.shape
    if not 0 <= task_index < m:
        raise IndexError(f"task index {task_index} out of range for m={m}")
    if x.shape[0] != d:
        raise ValidationError(f"feature vector has length {x.shape[0]}, model expects d={d}")
    return float(W[:, task_index] @ x)


def predict_scores(W: np.ndarray, data: MultiTaskDataset) -> list:
    if W.shape != (data.feature_dim, data.n_tasks):
        raise ValidationError(
            f"model shape {W.shape} does not match dataset (d={data.feature_dim}, m={data.n_tasks})")
    return [t.features @ W[:, i] for i, t in enumerate(data.tasks)]


__all__ = [
    "Regularizer", "LossKind", "LossMetric", "TaskDataset", "MultiTaskDataset",
    "SmtlConfig", "SolveReport", "IterationRecord", "make_rng", "save_model",
    "load_model", "predict", "predict_scores", "MODEL_HEADER",
]
