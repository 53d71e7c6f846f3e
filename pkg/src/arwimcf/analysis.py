"""Quantitative verdicts on the asymptotic behaviour of a flow trajectory.

Every claim is reported as a dict with the keys ``predicted``, ``measured``,
``tolerance`` and ``pass`` (plus an optional ``note``), which is also the
schema used in the JSON run report.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import AnalysisError
from .geometry import curvature_bundle, differentiate

__all__ = [
    "RateFit",
    "LimitVerdict",
    "CLAIM_NAMES",
    "fit_rate",
    "limit_verdict",
    "default_window",
    "check_f_u_limit",
    "check_convergence_claims",
]

# tolerances on fitted exponents
GRADIENT_RATE_TOL = 0.10
CURVATURE_RATE_TOL = 0.25
FU_RATE_TOL = 0.20
# a "bounded" series may not grow faster than this exponential rate
GROWTH_TOL = 0.05
DRIFT_TOL = 1e-3
METRIC_TOL = 1e-2
F_LIMIT_TOL = 1e-3
METRIC_CONSTANT_TOL = 1e-2
# residuals at or below this are roundoff of an exact identity
FU_EXACT = 1e-12

CLAIM_NAMES = (
    "utilde_bounds",
    "utilde_convergence",
    "utilde_derivatives_bounded",
    "gradient_decay_rate",
    "curvature_scaled_bounded",
    "F_scaled_bounds",
    "metric_limit",
    "umbilicity_rate",
    "breve_umbilicity_rate",
    "F_scaled_limit",
    "fu_limit",
    "metric_constant",
)


@dataclass
class RateFit:
    name: str
    window: tuple
    rate: float
    r2: float
    intercept: float
    n_points: int
    predicted: Optional[float] = None

    @property
    def rel_error(self) -> Optional[float]:
        if self.predicted is None or self.predicted == 0:
            return None
        return abs(self.rate - self.predicted) / abs(self.predicted)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["rel_error"] = self.rel_error
        return d


@dataclass
class LimitVerdict:
    name: str
    limit: float
    predicted: float
    abs_dev: float
    rel_dev: float
    monotone_tail: bool
    k: int = 3

    def to_dict(self) -> dict:
        return asdict(self)


def _window_mask(t, window):
    if window is None:
        return np.ones_like(t, dtype=bool)
    lo, hi = window
    eps = 1e-9 * max(1.0, abs(hi))
    return (t >= lo - eps) & (t <= hi + eps)


def fit_rate(t, values, window=None, name: str = "", predicted: Optional[float] = None) -> RateFit:
    """Least-squares fit of ``log(value) = c - rate * t`` on ``window``.

    Decay gives a positive rate. ``R^2`` is 1 for a series with no variance.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = _window_mask(t, window)
    tw, vw = t[mask], values[mask]
    if tw.size < 4:
        raise AnalysisError(f"{name or 'series'}: need at least 4 points in window, got {tw.size}")
    if np.any(~(vw > 0)):
        raise AnalysisError(f"{name or 'series'}: values must be positive for a log fit")
    y = np.log(vw)
    tm, ym = tw.mean(), y.mean()
    dt = tw - tm
    sxx = float(np.dot(dt, dt))
    if sxx == 0:
        raise AnalysisError(f"{name or 'series'}: window has no time extent")
    slope = float(np.dot(dt, y - ym)) / sxx
    intercept = float(ym - slope * tm)
    resid = y - (intercept + slope * tw)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(y - ym, y - ym))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    win = (float(tw[0]), float(tw[-1])) if window is None else (float(window[0]), float(window[1]))
    return RateFit(name, win, -slope, r2, intercept, int(tw.size), predicted)


def limit_verdict(name, values, predicted, k: int = 3) -> LimitVerdict:
    """Average of the last ``k`` values against ``predicted``; the tail flag
    checks that the distance to the prediction does not grow over the last quarter."""
    if k < 3:
        raise AnalysisError("limit verdicts use at least 3 points")
    values = np.asarray(values, dtype=float)
    if values.size < k:
        raise AnalysisError(f"{name}: need at least {k} values")
    limit = float(values[-k:].mean())
    dev = np.abs(values - predicted)
    tail = dev[-max(2, values.size // 4):]
    monotone = bool(np.all(np.diff(tail) <= 1e-15 * (1 + np.abs(predicted))))
    abs_dev = abs(limit - predicted)
    rel_dev = abs_dev / abs(predicted) if predicted != 0 else abs_dev
    return LimitVerdict(name, limit, float(predicted), abs_dev, rel_dev, monotone, k)


def default_window(t_end: float) -> tuple:
    """``[6, 12]`` for the standard run length; the second half of the run otherwise."""
    return (t_end / 2.0, t_end)


def _claim(predicted, measured, tolerance, passed, note="", **extra):
    d = {"predicted": predicted, "measured": measured, "tolerance": tolerance, "pass": bool(passed)}
    if note:
        d["note"] = note
    d.update(extra)
    return d


def _is_zero(values) -> bool:
    return bool(np.all(np.asarray(values) == 0.0))


def _rate_claim(name, t, values, window, predicted, rel_tol):
    if _is_zero(values[_window_mask(t, window)]):
        return _claim(predicted, 0.0, rel_tol, True, note="identically zero")
    fit = fit_rate(t, values, window, name, predicted)
    return _claim(predicted, fit.rate, rel_tol, fit.rel_error <= rel_tol, fit=fit.to_dict())


def _bounded_claim(name, t, values, window):
    """A series is bounded on the window if it does not grow exponentially."""
    if _is_zero(values[_window_mask(t, window)]):
        return _claim(0.0, 0.0, GROWTH_TOL, True, note="identically zero")
    fit = fit_rate(t, values, window, name)
    growth = -fit.rate
    return _claim("no growth", growth, GROWTH_TOL, growth <= GROWTH_TOL,
                  note="measured is the fitted exponential growth rate",
                  max=float(np.max(values[_window_mask(t, window)])))


def check_f_u_limit(traj, window=None) -> dict:
    """``max |f'(u) u - 1/gt| -> 0``; exact-identity residuals pass outright,
    otherwise the decay rate must be ``2 gamma`` within 20%."""
    t = traj.times()
    res = traj.series("fu_residual_max")
    if res.size == 0:
        raise AnalysisError("no diagnostics recorded")
    gamma = traj.config.params.gamma
    window = window or default_window(t[-1])
    final = float(res[-1])
    if final <= FU_EXACT:
        return _claim(0.0, final, FU_EXACT, True, note="residual at roundoff level")
    fit = fit_rate(t, res, window, "fu_residual", 2 * gamma)
    return _claim(2 * gamma, fit.rate, FU_RATE_TOL, fit.rel_error <= FU_RATE_TOL,
                  note="measured is the fitted decay rate", final=final, fit=fit.to_dict())


def _snapshots_in(traj, window):
    t = traj.times()
    mask = _window_mask(t, window)
    return [s for s, keep in zip(traj.snapshots, mask) if keep]


def check_convergence_claims(traj, window=None, enabled: Optional[Iterable[str]] = None) -> dict:
    """Evaluate the rescaled convergence, boundedness and decay-rate claims.

    Returns ``{claim_name: {predicted, measured, tolerance, pass, ...}}`` for
    every enabled claim (all by default). The breve-frame umbilicity rate is
    only checked when ``n + omega - 4 > 0``.
    """
    if not traj.diagnostics:
        raise AnalysisError("trajectory has no diagnostics")
    cfg = traj.config
    p = cfg.params
    n, gamma, gt = p.n, p.gamma, p.gamma_tilde
    enabled = set(CLAIM_NAMES if enabled is None else enabled)
    unknown = enabled - set(CLAIM_NAMES)
    if unknown:
        raise AnalysisError(f"unknown claims: {sorted(unknown)}")

    # series are aligned with snapshots; a trailing off-grid snapshot (u_floor stop) is kept
    t = traj.times()
    window = window or default_window(float(t[-1]))
    if _window_mask(t, window).sum() < 4:
        raise AnalysisError(f"fewer than 4 records in window {window}")
    S = traj.series
    claims = {}
    final = traj.snapshots[-1]
    et_final = np.exp(gamma * final.t)
    ut_final = final.u * et_final

    if "utilde_bounds" in enabled:
        lo = float(S("utilde_min").min())
        hi = float(S("utilde_max").max())
        claims["utilde_bounds"] = _claim(
            "-c1 <= utilde <= -c2 < 0", {"c1": -lo, "c2": -hi}, 0.0, hi < 0 and np.isfinite(lo)
        )

    if "utilde_convergence" in enabled:
        target = final.t - 1.0
        j = int(np.argmin(np.abs(t - target)))
        dt = final.t - t[j]
        if dt <= 0:
            raise AnalysisError("trajectory too short for a drift estimate")
        ut_prev = traj.snapshots[j].u * np.exp(gamma * t[j])
        drift = float(np.max(np.abs(ut_final - ut_prev)) / dt)
        claims["utilde_convergence"] = _claim(0.0, drift, DRIFT_TOL, drift <= DRIFT_TOL,
                                              note="max |d utilde/dt| over the last unit of time")

    if "utilde_derivatives_bounded" in enabled:
        snaps = _snapshots_in(traj, window)
        ts = np.array([s.t for s in snaps])
        d1, d2 = [], []
        for s in snaps:
            Du, D2u = differentiate(s.u * np.exp(gamma * s.t), cfg.domain)
            d1.append(float(np.abs(Du).max()))
            d2.append(float(np.abs(D2u).max()))
        c1 = _bounded_claim("D utilde", ts, np.array(d1), window)
        c2 = _bounded_claim("D2 utilde", ts, np.array(d2), window)
        claims["utilde_derivatives_bounded"] = _claim(
            "no growth", {"order1": c1["measured"], "order2": c2["measured"]}, GROWTH_TOL,
            c1["pass"] and c2["pass"], note="fitted growth rates of max |D^k utilde|, k = 1, 2",
        )

    if "gradient_decay_rate" in enabled:
        grad = S("grad_utilde_max") * np.exp(-gamma * t)
        claims["gradient_decay_rate"] = _rate_claim("|Du|", t, grad, window, gamma, GRADIENT_RATE_TOL)

    if "curvature_scaled_bounded" in enabled:
        claims["curvature_scaled_bounded"] = _bounded_claim("|A| e^(gamma t)", t, S("normA_scaled_max"), window)

    if "F_scaled_bounds" in enabled:
        fmin, fmax = S("F_scaled_min"), S("F_scaled_max")
        up = _bounded_claim("max F e^(-gamma t)", t, fmax, window)
        down = _bounded_claim("1 / min F e^(-gamma t)", t, 1.0 / fmin, window) if np.all(fmin > 0) else {"pass": False}
        claims["F_scaled_bounds"] = _claim(
            "0 < c1 <= F e^(-gamma t) <= c2", {"min": float(fmin.min()), "max": float(fmax.max())},
            GROWTH_TOL, bool(np.all(fmin > 0)) and up["pass"] and down["pass"],
        )

    if "metric_limit" in enabled:
        dev = S("metric_deviation")
        lv = limit_verdict("metric_deviation", dev, 0.0)
        claims["metric_limit"] = _claim(0.0, float(dev[-1]), METRIC_TOL, dev[-1] <= METRIC_TOL,
                                        note="final max deviation of the rescaled metric",
                                        monotone_tail=lv.monotone_tail)

    if "umbilicity_rate" in enabled:
        claims["umbilicity_rate"] = _rate_claim(
            "umbilicity ratio", t, S("umbilicity_ratio_max"), window, 2 * gamma, CURVATURE_RATE_TOL
        )

    breve_exp = (n + p.omega - 4) / (2 * n)
    if "breve_umbilicity_rate" in enabled and n + p.omega - 4 > 0:
        # the recorded series carries the factor exp(breve_exp * t); undo it for the fit
        breve = S("umbilicity_breve_scaled_max") * np.exp(-breve_exp * t)
        claims["breve_umbilicity_rate"] = _rate_claim(
            "breve umbilicity", t, breve, window, breve_exp, CURVATURE_RATE_TOL
        )

    if "F_scaled_limit" in enabled or "metric_constant" in enabled:
        b = curvature_bundle(final.u, cfg.sf, cfg.domain)

    if "F_scaled_limit" in enabled:
        pred = -1.0 / (gamma * ut_final)
        rel = float(np.max(np.abs(b.F / et_final / pred - 1.0)))
        claims["F_scaled_limit"] = _claim(
            {"min": float(pred.min()), "max": float(pred.max())}, rel, F_LIMIT_TOL, rel <= F_LIMIT_TOL,
            note="measured is the max relative deviation from -1/(gamma utilde) at the final time",
        )

    if "fu_limit" in enabled:
        claims["fu_limit"] = check_f_u_limit(traj, window)

    if "metric_constant" in enabled:
        scale = np.exp(2.0 * final.t / n + 2.0 * b.f)
        ratio = scale * b.g[0, 0] / (-ut_final) ** (2.0 / gt)
        measured = float(np.median(ratio))
        c, c_alt = p.metric_constant, p.metric_constant_alt
        rel = abs(measured - c) / c
        claims["metric_constant"] = _claim(
            c, measured, METRIC_CONSTANT_TOL, rel <= METRIC_CONSTANT_TOL,
            note="limit of exp(2t/n + 2f(u)) g_11 / (-utilde)^(2/gt) at the final time",
            alternative=c_alt, alternative_rel_dev=abs(measured - c_alt) / c_alt, rel_dev=rel,
        )
    return claims
