"""Central finite-difference verification of hand-derived gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked_coords: int
    worst: str = ""
    failures: list[str] = field(default_factory=list)


def relu_kink_mask(x: np.ndarray, eps: float) -> np.ndarray:
    """True where a coordinate sits within eps of the relu kink at 0."""
    return np.abs(x) <= eps


def grad_check(
    func: Callable[[], float],
    params: Sequence[Tensor],
    eps: float | Sequence[float] = 1e-4,
    tol: float = 1e-6,
    rng: Rng | None = None,
    max_coords: int = 64,
    exclude: Sequence[np.ndarray | None] | None = None,
    atol: float = 0.0,
) -> GradCheckReport:
    """Compare analytic gradients of ``func`` against central differences.

    ``func`` runs forward and backward from the current parameter values,
    accumulating into each parameter's grad buffer, and returns the scalar.
    Coordinates are probed exhaustively for small tensors and by seeded
    sampling above ``max_coords``. ``exclude`` masks (parallel to params,
    True entries skipped) let callers drop coordinates that sit on a relu
    kink where the two-sided difference is not a derivative.

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    ``eps`` may list several step sizes; each coordinate scores its best
    step. The two error sources of a difference quotient pull in opposite
    directions (truncation shrinks with the step, cancellation noise grows
    as it shrinks), so no single step suits both a stiff O(1) gradient and
    a tiny one; the analytic value must match at some step either way.
    A coordinate also counts as agreement when |a - n| <= ``atol`` at some
    step: gradients near the difference quotient's own noise floor cannot
    meet a relative tolerance at any step, and a wrong analytic value that
    close to the numeric one is immaterial by the same measure.
    A non-finite function value yields a failure report, never a crash.
    """
    steps = (eps,) if isinstance(eps, (int, float)) else tuple(eps)
    if rng is None:
        rng = Rng(0)
    for p in params:
        p.zero_grad()
    value = func()
    if not math.isfinite(value):
        return GradCheckReport(
            max_rel_err=math.inf,
            passed=False,
            checked_coords=0,
            worst=f"non-finite function value {value!r}",
        )
    analytic = [p.grad.copy() for p in params]

    max_rel = 0.0
    worst = ""
    checked = 0
    failures: list[str] = []
    for pi, p in enumerate(params):
        flat = p.values.reshape(-1)
        aflat = analytic[pi].reshape(-1)
        skip = None
        if exclude is not None and exclude[pi] is not None:
            skip = np.asarray(exclude[pi], dtype=bool).reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = range(n)
        else:
            seen = set()
            while len(seen) < max_coords:
                seen.add(rng.randint(0, n - 1))
            coords = sorted(seen)
        for ci in coords:
            if skip is not None and skip[ci]:
                continue
            orig = flat[ci]
            a = aflat[ci]
            rel = math.inf
            numeric = math.nan
            for e in steps:
                flat[ci] = orig + e
                f_plus = func()
                flat[ci] = orig - e
                f_minus = func()
                flat[ci] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    return GradCheckReport(
                        max_rel_err=math.inf,
                        passed=False,
                        checked_coords=checked,
                        worst=f"non-finite probe at param {pi} coord {ci}",
                    )
                num_e = (f_plus - f_minus) / (2.0 * e)
                if abs(a - num_e) <= atol:
                    rel = 0.0
                    numeric = num_e
                    break
                rel_e = abs(a - num_e) / max(1e-8, abs(a) + abs(num_e))
                if rel_e < rel:
                    rel = rel_e
                    numeric = num_e
                if rel <= tol:
                    break
            checked += 1
            if rel == 0.0:
                continue
            if rel > max_rel:
                max_rel = rel
                worst = f"param {pi} coord {ci}: analytic={a:.6e} numeric={numeric:.6e}"
            if rel > tol:
                failures.append(
                    f"param {pi} coord {ci}: analytic={a:.6e} numeric={numeric:.6e} rel={rel:.3e}"
                )
    return GradCheckReport(
        max_rel_err=max_rel,
        passed=max_rel <= tol and checked > 0,
        checked_coords=checked,
        worst=worst,
        failures=failures[:8],
    )
