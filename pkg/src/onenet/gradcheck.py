"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    probes: int
    errors: list[tuple[str, float]] = field(default_factory=list)
    kinks: int = 0

    def ok(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol

    def worst(self, n: int = 3) -> list[tuple[str, float]]:
        return sorted(self.errors, key=lambda e: -e[1])[:n]


def _rel(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    directions: int = 4, full_limit: int = 64,
                    rng: Optional[np.random.Generator] = None, floor: float = 1e-3,
                    kink_tol: float = 1e-6, retries: int = 4,
                    names: Optional[Sequence[str]] = None) -> GradCheckResult:
    """Compare backprop against central differences of the scalar ``fn()``.

    Inputs with at most ``full_limit`` elements are checked entry by entry;
    larger ones along ``directions`` random directions with O(1) entries.
    Inputs are perturbed in place and restored. Use float64 tensors.

    Errors are relative, with the denominator floored at ``floor`` times the
    norm of the full gradient (all inputs together). Without it a gradient
    that is exactly zero, e.g. a bias cancelled by a following batch norm,
    turns round-off into a relative error of 1.

    A difference quotient is only an oracle where ``fn`` is smooth along the
    whole step. When the estimates at ``eps`` and ``eps/2`` disagree by more
    than ``kink_tol`` (same floor), the segment crosses a ReLU
    or max-pool kink and the step is shrunk tenfold. Retries are counted in
    ``kinks``; a probe that never settles is scored with its first estimate.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64).copy() for t in inputs]
    result = GradCheckResult(0.0, 0)
    floor = max(floor * float(np.sqrt(sum(np.sum(g * g) for g in analytic))), 1e-300)

    def slope(t: Tensor, base: np.ndarray, v: np.ndarray, h: float) -> float:
        t.data[...] = base + h * v
        fp = fn().item()
        t.data[...] = base - h * v
        fm = fn().item()
        t.data[...] = base
        return (fp - fm) / (2 * h)

    def settled(t, base, v, h):
        """(estimate at h, whether the estimates at h and h/2 agree)."""
        d1 = slope(t, base, v, h)
        d2 = slope(t, base, v, h / 2)
        return d1, _rel(d1, d2, floor) <= kink_tol

    def score(name: str, err: float) -> None:
        result.errors.append((name, err))
        result.probes += 1
        result.max_rel_error = max(result.max_rel_error, err)

    def probe(t, base, v) -> float:
        h, first = eps, None
        for _ in range(retries):
            est, smooth = settled(t, base, v, h)
            if smooth:
                return est
            first = est if first is None else first
            result.kinks += 1
            h /= 10
        return first

    for t, g, name in zip(inputs, analytic, names):
        base = t.data.copy()
        if t.size <= full_limit:
            num = np.zeros(t.size)
            for i in range(t.size):
                v = np.zeros(t.size)
                v[i] = 1.0
                num[i] = probe(t, base, v.reshape(t.shape))
            denom = max(np.linalg.norm(num), np.linalg.norm(g), floor)
            score(name, float(np.linalg.norm(num - g.reshape(-1)) / denom))
        else:
            for d in range(directions):
                v = rng.standard_normal(t.shape)
                score(f"{name}[dir{d}]", _rel(probe(t, base, v), float(np.sum(g * v)), floor))
    return result
