"""Adaptive embedded Runge-Kutta stepping (Dormand-Prince 5(4)).

Written out by hand rather than driving ``scipy.integrate.solve_ivp`` so
that a step can be capped externally (stability bound, record times), stage
failures can be turned into step rejections, and the suggested next step is
exposed for bit-exact checkpoint/resume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArwError, StepFailure

__all__ = ["DT_MIN", "MAX_REJECTS", "C", "A", "B5", "B4", "StepResult", "dp54_step", "error_norm"]

DT_MIN = 1e-10
MAX_REJECTS = 20
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass
class StepResult:
    t: float
    y: np.ndarray
    dt_used: float
    error: float
    dt_next: float
    rejected: int
    k_last: np.ndarray


def error_norm(y, y5, y4, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
    return float(np.max(np.abs(y5 - y4) / scale))


def _attempt(fun, t, y, k1, dt):
    ks = [k1]
    for i in range(1, 7):
        acc = y
        for j, a in enumerate(A[i]):
            if a != 0.0:
                acc = acc + (dt * a) * ks[j]
        if i == 6:
            # the 7th stage is evaluated at the 5th-order solution (FSAL)
            y5 = acc
            ks.append(fun(t + dt, y5))
            break
        ks.append(fun(t + C[i] * dt, acc))
    y4 = y
    for j, b in enumerate(B4):
        if b != 0.0:
            y4 = y4 + (dt * b) * ks[j]
    return y5, y4, ks[-1]


def dp54_step(fun, t, y, dt_suggest, rtol, atol, k1=None, dt_max=np.inf,
              max_rejects=MAX_REJECTS, recoverable=(ArwError,)) -> StepResult:
    """Take one accepted step of size at most ``dt_max``.

    A nonpositive ``dt_suggest`` is replaced by :data:`DT_MIN`. Exceptions of
    type ``recoverable`` raised inside a stage count as a rejection and halve
    the step. After ``max_rejects`` rejections :class:`StepFailure` is raised.
    """
    if k1 is None:
        k1 = fun(t, y)
    dt_req = dt_suggest if dt_suggest > 0 else DT_MIN
    dt = min(dt_req, dt_max)
    if not dt > 0:
        raise StepFailure(f"no admissible step at t={t} (dt_max={dt_max})")
    rejected = 0
    last_cause = None
    while True:
        try:
            y5, y4, k_last = _attempt(fun, t, y, k1, dt)
            err = error_norm(y, y5, y4, rtol, atol)
            if not np.isfinite(err):
                raise StepFailure("non-finite error estimate")
        except recoverable as exc:
            last_cause = exc
            err = None
        if err is not None and err <= 1.0:
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** -0.2))
            dt_next = dt * factor
            if dt < dt_req:
                # the step was shortened externally; do not let that shrink the next one
                dt_next = max(dt_next, dt_req)
            return StepResult(t + dt, y5, dt, err, dt_next, rejected, k_last)
        rejected += 1
        if rejected >= max_rejects:
            msg = f"step failed at t={t} after {rejected} rejections"
            if last_cause is not None and err is None:
                msg += f" (last stage error: {last_cause})"
            raise StepFailure(msg)
        if err is None:
            dt *= 0.5
        else:
            dt *= max(MIN_FACTOR, SAFETY * err ** -0.2)
