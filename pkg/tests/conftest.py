import numpy as np
import pytest

from caswit import tensor as T
from caswit.tensor import Tensor, precision

GRAD_RTOL = 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = max(np.linalg.norm(numeric.ravel()), np.linalg.norm(analytic.ravel()), 1e-8)
    return float(diff / scale)


def check_gradients(fn, *arrays, seed: int = 0, h: float = 1e-6) -> float:
    """Compare reverse-mode gradients of ``sum(fn(*xs) * R)`` with central differences.

    Every input is a float64 leaf; returns the worst relative error over inputs.
    """
    with precision(np.float64):
        xs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        out = fn(*xs)
        proj = Tensor(np.random.default_rng(seed).standard_normal(out.shape))

        def scalar(*args):
            return T.sum_(T.mul(fn(*args), proj))

        scalar(*xs).backward()
        worst = 0.0
        for i, x in enumerate(xs):
            def f_i(xi, i=i):
                args = list(xs)
                args[i] = xi
                return scalar(*args)

            numeric = T.finite_diff_grad(f_i, x, h)
            worst = max(worst, rel_error(x.grad, numeric))
        return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def spot_check_parameters(model, loss_fn, n: int = 5, seed: int = 0, h: float = 1e-4,
                          min_grad: float = 1e-6) -> list:
    """Finite-difference check of ``n`` randomly sampled scalar parameters of ``model``.

    ``loss_fn()`` must rebuild the forward pass from the current parameter
    data and return a scalar Tensor. Run inside ``precision(np.float64)``
    with float64 parameters. Coordinates are drawn among those whose gradient
    magnitude is at least ``min_grad``: below that, central-difference
    round-off (about eps * |loss| / h) dominates any relative comparison.
    The default step is larger than for single ops for the same reason: a
    whole-network loss is smooth, so O(h^2) truncation stays far below the
    tolerance while round-off shrinks.
    Returns ``[(name, index, analytic, numeric, rel)]``.
    """
    rng = np.random.default_rng(seed)
    params = list(model.named_parameters())
    model.zero_grad()
    loss_fn().backward()
    out = []
    eligible = [(name, p) for name, p in params if p.grad is not None and (np.abs(p.grad) >= min_grad).any()]
    picks = rng.choice(len(eligible), size=n, replace=len(eligible) < n)
    for k in picks:
        name, p = eligible[int(k)]
        candidates = np.argwhere(np.abs(p.grad) >= min_grad)
        idx = tuple(int(v) for v in candidates[rng.integers(0, len(candidates))])
        analytic = float(p.grad[idx])
        orig = p.data[idx]
        with T.no_grad():
            p.data[idx] = orig + h
            fp = float(loss_fn().data)
            p.data[idx] = orig - h
            fm = float(loss_fn().data)
        p.data[idx] = orig
        numeric = (fp - fm) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        out.append((name, idx, analytic, numeric, rel))
    return out


def to_float64(model) -> None:
    for p in model.parameters():
        p.data = p.data.astype(np.float64)


# -- acceptance reporting -----------------------------------------------------------

_CRITERIA: list[str] = []


class Criterion:
    """Collects the sub-checks of one acceptance criterion and reports a single PASS/FAIL line."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.checks: list[tuple[str, bool]] = []

    def check(self, what: str, ok) -> bool:
        self.checks.append((what, bool(ok)))
        return bool(ok)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and not issubclass(exc_type, AssertionError):
            self.checks.append((f"raised {exc_type.__name__}: {exc}", False))
        ok = bool(self.checks) and all(ok for _, ok in self.checks)
        failed = [what for what, good in self.checks if not good]
        detail = "; ".join(what for what, _ in self.checks) if ok else "failed: " + "; ".join(failed)
        line = f"criterion {self.number} {'PASS' if ok else 'FAIL'} - {self.title} [{detail}]"
        _CRITERIA.append(line)
        print(line)
        if exc_type is None:
            assert ok, line
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
