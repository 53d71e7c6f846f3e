"""Scale factors of asymptotically Robertson-Walker backgrounds.

A background is described by the warp exponent ``f(tau)`` on a conformal
time interval ``(a, 0)`` with the big-crunch singularity at ``tau = 0``.
This module provides the exact reference family, a perturbation of it that
differs only by terms vanishing to all orders at the singularity, and a
certifier that checks the growth conditions on a geometric ladder of
conformal times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "ArwParams",
    "ScaleFactor",
    "CanonicalScaleFactor",
    "PerturbedScaleFactor",
    "ConditionCheck",
    "ArwCertificate",
    "make_canonical",
    "make_perturbed",
    "default_ladder",
    "richardson_limit",
    "certify_arw",
]


@dataclass(frozen=True)
class ArwParams:
    """Dimension, equation-of-state exponent and mass of the background.

    The decay exponents are derived, never stored independently:
    ``gamma_tilde = (n + omega - 2) / 2`` and ``gamma = gamma_tilde / n``.
    """

    n: int
    omega: float
    m: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"n must be an integer >= 1, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "m", float(self.m))
        if not np.isfinite(self.omega) or not np.isfinite(self.m):
            raise ConfigurationError("omega and m must be finite")
        if self.n + self.omega - 2 <= 0:
            raise ConfigurationError(
                f"n + omega - 2 must be positive (n={self.n}, omega={self.omega})"
            )
        if self.m <= 0:
            raise ConfigurationError(f"mass m must be positive, got {self.m}")

    @property
    def gamma_tilde(self) -> float:
        return (self.n + self.omega - 2) / 2

    @property
    def gamma(self) -> float:
        return self.gamma_tilde / self.n

    @property
    def metric_constant(self) -> float:
        """Limit constant of the rescaled induced metric, ``(gt*sqrt(m))**(2/gt)``."""
        gt = self.gamma_tilde
        return (gt * np.sqrt(self.m)) ** (2.0 / gt)

    @property
    def metric_constant_alt(self) -> float:
        """The competing constant ``(gt*m)**(1/gt)``; equal to the above only if gt = 1."""
        gt = self.gamma_tilde
        return (gt * self.m) ** (1.0 / gt)


class ScaleFactor:
    """Base class: evaluable ``f`` and its first three conformal-time derivatives.

    Subclasses implement :meth:`_derivatives` on validated input and may
    override :meth:`phi` when ``f'' + gamma_tilde f'^2`` has a form free of
    cancellation.
    """

    kind: str = "abstract"

    def __init__(self, params: ArwParams, a: float, b: float = 0.0):
        if not a < b <= 0.0:
            raise ConfigurationError(f"domain must satisfy a < b <= 0, got ({a}, {b})")
        self.params = params
        self.a = float(a)
        self.b = float(b)

    @property
    def domain(self) -> tuple[float, float]:
        return (self.a, self.b)

    def _check(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if not np.all(np.isfinite(tau)):
            raise DomainError("non-finite conformal time")
        lo, hi = self.a, self.b
        bad = (tau < lo) | (tau >= 0.0) | (tau > hi)
        if np.any(bad):
            first = tau[bad].flat[0] if tau.ndim else float(tau)
            raise DomainError(f"tau={first!r} outside scale-factor domain [{lo}, {hi})")
        return tau

    def derivatives(self, tau):
        """Return ``(f, f', f'', f''')`` evaluated at ``tau``."""
        tau = self._check(tau)
        out = self._derivatives(tau)
        if not all(np.all(np.isfinite(x)) for x in out):
            raise DomainError("scale factor produced non-finite values")
        return out

    def __call__(self, tau):
        return self.derivatives(tau)[0]

    def phi(self, tau):
        """``f'' + gamma_tilde * f'^2``."""
        _, f1, f2, _ = self.derivatives(tau)
        return f2 + self.params.gamma_tilde * f1 * f1

    def _derivatives(self, tau):  # pragma: no cover - abstract
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError


class CanonicalScaleFactor(ScaleFactor):
    """``f(tau) = log(-gt*sqrt(m)*tau) / gt``, saturating every growth condition."""

    kind = "canonical"

    def _derivatives(self, tau):
        gt = self.params.gamma_tilde
        f = np.log(-gt * np.sqrt(self.params.m) * tau) / gt
        f1 = 1.0 / (gt * tau)
        f2 = -1.0 / (gt * tau**2)
        f3 = 2.0 / (gt * tau**3)
        return f, f1, f2, f3

    def phi(self, tau):
        tau = self._check(tau)
        return np.zeros_like(tau)

    def to_spec(self) -> dict:
        return {"kind": self.kind, "a": self.a}


def _bump(tau):
    """``exp(-1/tau^2)`` and its first three derivatives."""
    with np.errstate(over="ignore", under="ignore"):
        b0 = np.exp(-1.0 / tau**2)
        r = 1.0 / tau
        b1 = 2.0 * r**3 * b0
        b2 = (4.0 * r**6 - 6.0 * r**4) * b0
        b3 = (8.0 * r**9 - 36.0 * r**7 + 24.0 * r**5) * b0
    return b0, b1, b2, b3


class PerturbedScaleFactor(ScaleFactor):
    """Canonical factor plus ``amplitude * exp(-1/tau^2)``."""

    kind = "perturbed"

    def __init__(self, base: CanonicalScaleFactor, amplitude: float):
        super().__init__(base.params, base.a, base.b)
        self.base = base
        self.amplitude = float(amplitude)

    def _derivatives(self, tau):
        f, f1, f2, f3 = self.base._derivatives(tau)
        if self.amplitude == 0.0:
            return f, f1, f2, f3
        A = self.amplitude
        b0, b1, b2, b3 = _bump(tau)
        return f + A * b0, f1 + A * b1, f2 + A * b2, f3 + A * b3

    def phi(self, tau):
        tau = self._check(tau)
        if self.amplitude == 0.0:
            return np.zeros_like(tau)
        A, gt = self.amplitude, self.params.gamma_tilde
        _, f1, _, _ = self.base._derivatives(tau)
        _, b1, b2, _ = _bump(tau)
        # the base part of phi vanishes identically
        return A * b2 + gt * (2.0 * f1 * A * b1 + (A * b1) ** 2)

    def to_spec(self) -> dict:
        return {"kind": self.kind, "a": self.a, "amplitude": self.amplitude}


def make_canonical(params: ArwParams, a: float = -1.0) -> CanonicalScaleFactor:
    """Closed-form reference scale factor on ``(a, 0)``."""
    if not a < 0:
        raise ConfigurationError(f"left endpoint must be negative, got {a}")
    return CanonicalScaleFactor(params, a)


def _monotonicity_ladder(a: float, b: float = 0.0) -> np.ndarray:
    lin = np.linspace(a, b, 2001)[1:-1]
    geo = -np.geomspace(min(-a, 1.0) * 0.999, 1e-8, 400)
    geo = geo[geo > a]
    return np.concatenate([lin, geo])


def make_perturbed(base: CanonicalScaleFactor, amplitude: float) -> PerturbedScaleFactor:
    """Perturb ``base`` by a bump that vanishes to all orders at ``tau = 0``.

    Raises :class:`ConfigurationError` naming the first sampled ``tau`` where
    ``-f' > 0`` fails.
    """
    if not isinstance(base, CanonicalScaleFactor):
        raise ConfigurationError("perturbations are defined relative to the canonical factor")
    sf = PerturbedScaleFactor(base, amplitude)
    ladder = _monotonicity_ladder(sf.a, sf.b)
    f1 = sf.derivatives(ladder)[1]
    bad = np.nonzero(~(-f1 > 0))[0]
    if bad.size:
        raise ConfigurationError(
            f"perturbation amplitude {amplitude} breaks -f' > 0 at tau={float(ladder[bad[0]])!r}"
        )
    return sf


def default_ladder(end: float = -1e-4, ratio: float = 0.5, points: int = 12) -> np.ndarray:
    """Geometric ladder ``end / ratio**k`` ordered toward the singularity."""
    k = np.arange(points - 1, -1, -1)
    return end / ratio**k


def richardson_limit(tau, values, powers: Sequence[float] = (1, 2, 3)):
    """Extrapolate ``values(tau)`` to ``tau = 0``.

    Fits ``L + sum_p c_p tau**p`` exactly through the last ``len(powers) + 1``
    samples. Returns ``(L, err)`` where ``err`` is the change against the
    extrapolation with one fewer correction term.
    """
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)

    def solve(k):
        t = tau[-(k + 1):]
        y = values[-(k + 1):]
        scale = np.max(np.abs(t))
        cols = [np.ones_like(t)] + [(t / scale) ** p for p in powers[:k]]
        return np.linalg.solve(np.stack(cols, axis=1), y)[0]

    k = len(powers)
    L = solve(k)
    L_prev = solve(k - 1) if k > 0 else values[-1]
    return float(L), float(abs(L - L_prev))


@dataclass
class ConditionCheck:
    name: str
    value: Optional[float]
    residual: float
    passed: bool
    power: Optional[float] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "residual": self.residual,
            "power": self.power,
            "pass": self.passed,
            "note": self.note,
        }


@dataclass
class ArwCertificate:
    """Per-condition verdicts with the measured constants."""

    kind: str
    tol: float
    ladder: np.ndarray
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, name) -> ConditionCheck:
        return self.checks[name]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tol": self.tol,
            "ladder": [float(x) for x in self.ladder],
            "pass": self.passed,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
        }


# Residuals below this are treated as the noise floor of an exact identity:
# roundoff for closed forms, interpolation error for ODE-derived factors.
_ROUNDOFF = 1e-11


def _residual_power(tau, resid):
    """Fitted exponent p in ``|resid| ~ c |tau|**p``; ``None`` if at roundoff level."""
    mask = np.abs(resid) > _ROUNDOFF
    if mask.sum() < 3:
        return None
    x = np.log(np.abs(tau[mask]))
    y = np.log(np.abs(resid[mask]))
    return float(np.polyfit(x, y, 1)[0])


def _asymptotic_check(name, tau, resid, tol, expected_power=None):
    resid = np.abs(resid)
    power = _residual_power(tau, resid)
    ok = bool(np.all(np.isfinite(resid)) and resid[-1] <= tol)
    note = "identically zero (at noise floor)" if power is None else ""
    if power is not None and expected_power is not None:
        # an O(tau**p) residual with p clearly below the expected order is a failure
        ok = ok and power >= expected_power - 0.25
    return ConditionCheck(name, float(resid[-1]), float(resid[-1]), ok, power, note)


def certify_arw(sf: ScaleFactor, tau_ladder=None, tol: float = 1e-6) -> ArwCertificate:
    """Check the growth conditions of ``sf`` on a geometric ladder toward ``tau = 0``.

    Limits are estimated by Richardson extrapolation. The three asymptotic
    relations near the singularity report the fitted power of ``|tau|`` in
    their residual (``None`` when the residual is identically zero).
    """
    ladder = default_ladder() if tau_ladder is None else np.asarray(tau_ladder, dtype=float)
    if ladder.ndim != 1 or ladder.size < 8:
        raise ConfigurationError("certification ladder needs at least 8 points")
    ratios = ladder[1:] / ladder[:-1]
    if np.any(ladder >= 0) or np.any(ratios <= 0) or np.any(ratios >= 1):
        raise ConfigurationError("ladder must be negative with ratios in (0, 1)")
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ConfigurationError("ladder must be geometric")

    p = sf.params
    gt, m = p.gamma_tilde, p.m
    f, f1, f2, f3 = sf.derivatives(ladder)
    phi = np.asarray(sf.phi(ladder))
    cert = ArwCertificate(kind=sf.kind, tol=tol, ladder=ladder)

    c_lower = float(np.min(-f1))
    cert.checks["monotone"] = ConditionCheck(
        "monotone", c_lower, 0.0, bool(c_lower > 0), note="min of -f' on ladder"
    )

    mass_series = f1**2 * np.exp(2 * gt * f)
    m_est, m_err = richardson_limit(ladder, mass_series, powers=(2, 4))
    cert.checks["mass_limit"] = ConditionCheck(
        "mass_limit",
        m_est,
        abs(m_est - m),
        bool(np.isfinite(m_est) and abs(m_est - m) <= tol * max(1.0, m)),
        note=f"extrapolation spread {m_err:.3e}",
    )

    phi_est, phi_err = richardson_limit(ladder, phi, powers=(1, 2))
    cert.checks["phi_limit"] = ConditionCheck(
        "phi_limit",
        phi_est,
        phi_err,
        bool(np.isfinite(phi_est) and phi_err <= tol * max(1.0, abs(phi_est))),
        note="residual is the extrapolation spread",
    )

    for k, dk in ((2, f2), (3, f3)):
        ratio = np.abs(dk) / np.abs(f1) ** k
        slope = float(np.polyfit(np.log(-ladder), np.log(ratio), 1)[0]) if np.all(ratio > 0) else 0.0
        # bounded means no power-law growth as tau -> 0
        ok = bool(np.all(np.isfinite(ratio)) and slope > -0.05)
        cert.checks[f"ratio_{k}"] = ConditionCheck(
            f"ratio_{k}", float(np.max(ratio)), max(0.0, -slope), ok,
            note=f"max |D^{k} f| / |f'|^{k}; log-log slope {slope:.3e}",
        )

    with np.errstate(over="ignore"):
        ev = np.exp(gt * f)
    cert.checks["crunch_rate"] = _asymptotic_check(
        "crunch_rate", ladder, ev / ladder + gt * np.sqrt(m), tol
    )
    cert.checks["velocity_residual"] = _asymptotic_check(
        "velocity_residual", ladder, f1 * ev + np.sqrt(m), tol, expected_power=2.0
    )
    cert.checks["f_prime_tau"] = _asymptotic_check(
        "f_prime_tau", ladder, gt * f1 * ladder - 1.0, tol, expected_power=2.0
    )
    return cert
