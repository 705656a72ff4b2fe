from fractions import Fraction

import numpy as np
import pytest
from hypothesis import settings

from smtl import losses
from smtl.model import LossKind, MultiTaskDataset, TaskDataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_labels(rng, n):
    """Random +-1 labels with both classes present (n >= 2)."""
    y = rng.choice([-1.0, 1.0], n)
    if n >= 2 and (y.min() > 0 or y.max() < 0):
        y[rng.integers(n)] *= -1
    return y


def random_task(rng, n, d, name="t"):
    return TaskDataset(rng.normal(size=(n, d)), random_labels(rng, n), name)


def random_data(rng, m, d, n_lo=2, n_hi=6):
    return MultiTaskDataset(tuple(
        random_task(rng, int(rng.integers(n_lo, n_hi + 1)), d, f"t{i}") for i in range(m)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def exact_objective(loss, s, y, coef):
    """Objective of the maximizer encoded by ``coef``, in rational arithmetic.

    Scores are floats and therefore exact rationals; only the loss term and
    the sum need care. Two maximizers that tie in exact arithmetic can still
    round to values one ulp apart, so equality is judged here.
    """
    s_exact = [Fraction(float(v)) for v in s]
    if loss.kind is LossKind.AUC:
        n_pn = int((y > 0).sum() * (y < 0).sum())
        counts = np.rint(np.abs(coef) * n_pn / 2).astype(int)
        dlt = Fraction(int(counts[y > 0].sum()), n_pn)
        coef_exact = [Fraction(2 * int(c), n_pn) * (1 if yk > 0 else -1) for c, yk in zip(counts, y)]
    else:
        lab = y - coef
        coef_exact = [Fraction(int(round(c))) for c in coef]
        if loss.kind is LossKind.F1:
            tp = int(((lab > 0) & (y > 0)).sum())
            n_pos, n_pred = int((y > 0).sum()), int((lab > 0).sum())
            beta = Fraction(loss.beta)
            dlt = 1 - ((1 + beta) * tp / (n_pred + beta * n_pos) if tp else 0)
        else:
            dlt = Fraction(losses.delta(loss, y, lab))
    return dlt - sum(c * v for c, v in zip(coef_exact, s_exact))


def same_objective(loss, s, y, a, b):
    """Float-equal, or two tied maximizers whose exact objectives agree."""
    if a.objective == b.objective:
        return True
    return exact_objective(loss, s, y, a.coef) == exact_objective(loss, s, y, b.coef)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    line = f"criterion {number}: {status} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
