"""The flow reparametrized by ``s = -exp(-gamma t)/gamma`` and its mirror branch.

Along Lagrangian markers ``x(t)`` (moving with the spatial part of the flow
velocity) we evaluate the derivatives of ``y(s) = x(t)`` up to third order,
split into normal and tangential parts relative to the flow hypersurface,
and check that each part either converges or tends to zero as ``s -> 0-``.
The expanding branch ``s > 0`` is the exact reflection ``y^0 -> -y^0``.

Conventions: ``E = exp(gamma t)`` so ``d/ds = E d/dt``; an ambient vector
``Y`` is decomposed as ``Y = a nu + b^k e_k`` with the past-directed unit
normal ``nu`` and the tangent vectors ``e_k = (u_k, delta_k)``, i.e.
``a = -<Y, nu>`` and ``b^k = g^{kl} <Y, e_l>``. Components are expressed
in the spatial coordinates ``x`` at the marker position; their limits agree
with those in Lagrangian coordinates because the marker map converges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import map_coordinates

from .errors import AnalysisError, ConfigurationError
from .geometry import curvature_bundle, gradient
from .integrator import dp54_step

__all__ = [
    "DEFAULT_SEEDS",
    "COMPONENTS",
    "LagrangianMarkers",
    "TransitionSeries",
    "advect_markers",
    "build_transition_series",
    "check_c3_matching",
    "mirror_parity",
]

DEFAULT_SEEDS = ((0.0, 0.0), (np.pi / 4, 0.0), (np.pi / 2, 0.0), (3 * np.pi / 4, 0.0))
# snapshots dropped at each end: two nested 5-point time derivatives
TRIM = 4
MAX_RECORD_EVERY = 0.1
RELATIVE_DECAY = 1e-3
CONVERGE_SPREAD = 0.05
TAIL_POINTS = 5
# a marker whose series stays below this fraction of the largest marker's
# series is at a symmetry point where the component vanishes up to roundoff
NOISE_FLOOR = 1e-8

# name -> (order of s-derivatives, part, expected behaviour as s -> 0-)
COMPONENTS = {
    "y_prime.time": (1, "normal", "converges"),
    "y_prime.space": (1, "tangential", "zero"),
    "y_prime_i.normal": (1, "normal", "converges"),
    "y_prime_i.tangential": (1, "tangential", "zero"),
    "y_ij.normal": (0, "normal", "zero"),
    "y2.normal": (2, "normal", "zero"),
    "y2.tangential": (2, "tangential", "converges"),
    "y_ijk.normal": (0, "normal", "zero"),
    "y_ijk.tangential": (0, "tangential", "zero"),
    "Ds_y_ij.normal": (1, "normal", "converges"),
    "Ds_y_ij.tangential": (1, "tangential", "zero"),
    "y2_i.normal": (2, "normal", "zero"),
    "y2_i.tangential": (2, "tangential", "converges"),
    "y3.normal": (3, "normal", "converges"),
    "y3.tangential": (3, "tangential", "zero"),
}


def mirror_parity(name: str) -> int:
    """Sign relating the mirrored branch at ``+|s|`` to the original at ``-|s|``.

    With ``y^0 -> -y^0`` and ``d/ds -> -d/ds`` a component carrying ``k``
    s-derivatives picks up ``(-1)^(k+1)`` (normal) or ``(-1)^k`` (tangential).
    """
    k, part, _ = COMPONENTS[name]
    return (-1) ** (k + 1) if part == "normal" else (-1) ** k


def _check_parity_table():
    # a component can only be continuous across s = 0 with odd parity if it vanishes there
    for name, (_, _, expect) in COMPONENTS.items():
        if mirror_parity(name) == -1 and expect != "zero":
            raise AssertionError(f"parity table inconsistent for {name}")


_check_parity_table()


@dataclass
class LagrangianMarkers:
    seeds: np.ndarray
    t: np.ndarray
    x: np.ndarray  # (markers, times, n), unwrapped
    steps: int = 0

    def displacement(self) -> np.ndarray:
        return np.linalg.norm(self.x - self.x[:, :1, :], axis=-1)


@dataclass
class TransitionSeries:
    t: np.ndarray
    s: np.ndarray
    gamma: float
    markers: LagrangianMarkers
    components: dict = field(default_factory=dict)  # name -> (markers, times, dim)

    def norm(self, name) -> np.ndarray:
        """Euclidean norm over the component index, shape ``(markers, times)``."""
        return np.sqrt(np.sum(self.components[name] ** 2, axis=-1))

    def mirrored(self, name):
        """Mirror branch ``(s > 0 increasing away from 0, values)``."""
        return -self.s[::-1], mirror_parity(name) * self.components[name][:, ::-1, :]

    def rows(self):
        """CSV rows ``(s, marker, component, value)`` for both branches."""
        for name, vals in self.components.items():
            dim = vals.shape[-1]
            s_pos, mir = self.mirrored(name)
            for mk in range(vals.shape[0]):
                for d in range(dim):
                    label = name if dim == 1 else f"{name}[{d}]"
                    for j, s in enumerate(self.s):
                        yield float(s), mk, label, float(vals[mk, j, d])
                    for j, s in enumerate(s_pos):
                        yield float(s), mk, label, float(mir[mk, j, d])


def _interp(field_, x, h):
    """Periodic cubic interpolation of a grid field at physical positions ``x`` (points, n)."""
    coords = (np.asarray(x) / h).T
    return map_coordinates(field_, coords, order=3, mode="grid-wrap")


def _uniform_snapshots(traj):
    snaps = traj.snapshots
    dt = traj.config.record_every
    # a trailing off-grid snapshot (u_floor stop) is dropped
    if len(snaps) > 1 and abs(snaps[-1].t - snaps[-1].index * dt) > 1e-12 * max(1.0, snaps[-1].t):
        snaps = snaps[:-1]
    t = np.array([s.t for s in snaps])
    if t.size > 1 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise ConfigurationError("transition analysis needs uniformly spaced snapshots")
    return snaps, t


def _velocity(bundle):
    """Spatial flow velocity ``v~ u^i / F`` as an array ``(n,) + grid``."""
    return bundle.v_tilde * bundle.Du / (bundle.s * bundle.F)


def advect_markers(traj, seeds: Optional[Sequence] = None, rtol: float = 1e-10,
                   atol: float = 1e-12) -> LagrangianMarkers:
    """Integrate ``dx^i/dt = v~ u^i / F`` from the seeds through all snapshot times."""
    cfg = traj.config
    dom = cfg.domain
    if cfg.record_every > MAX_RECORD_EVERY + 1e-12:
        raise ConfigurationError(f"marker advection needs record_every <= {MAX_RECORD_EVERY}")
    snaps, t = _uniform_snapshots(traj)
    if t.size < 4:
        raise ConfigurationError("need at least 4 snapshots for marker advection")
    seeds = np.array(DEFAULT_SEEDS if seeds is None else seeds, dtype=float)
    seeds = seeds[:, : dom.n]
    vel = np.stack([_velocity(curvature_bundle(s.u, cfg.sf, dom)) for s in snaps])
    spline = CubicSpline(t, vel, axis=0)
    h = dom.h

    def fun(tt, x):
        if tt < t[0] - 1e-12 or tt > t[-1] + 1e-12:
            raise AnalysisError(f"marker time {tt} outside snapshot range [{t[0]}, {t[-1]}]")
        v = spline(tt)
        return np.stack([_interp(v[i], x, h) for i in range(dom.n)], axis=1)

    x = seeds.copy()
    out = [x.copy()]
    tt, dt, steps = t[0], cfg.record_every, 0
    for t_next in t[1:]:
        while tt < t_next:
            res = dp54_step(fun, tt, x, dt, rtol, atol, dt_max=t_next - tt, recoverable=())
            steps += 1
            landed = res.dt_used >= t_next - tt
            tt = t_next if landed else res.t
            x, dt = res.y, res.dt_next
        out.append(x.copy())
    return LagrangianMarkers(seeds, t, np.stack(out, axis=1), steps)


def _ddt(stack, k, dt):
    """Five-point centred time derivative of a stacked field at index ``k``."""
    return (stack[k - 2] - stack[k + 2] + 8.0 * (stack[k + 1] - stack[k - 1])) / (12.0 * dt)


def _gbar(Y, X, s, s_tau, s_grad):
    """Ambient Christoffel contraction ``Gamma^a_{bc} Y^b X^c`` for ``-dtau^2 + s delta``."""
    n = len(s_grad)
    YX = sum(Y[1 + i] * X[1 + i] for i in range(n))
    sX = sum(s_grad[i] * X[1 + i] for i in range(n))
    sY = sum(s_grad[i] * Y[1 + i] for i in range(n))
    Z = np.empty_like(Y)
    Z[0] = 0.5 * s_tau * YX
    for i in range(n):
        Z[1 + i] = (0.5 * s_tau / s) * (Y[0] * X[1 + i] + Y[1 + i] * X[0]) + (
            Y[1 + i] * sX + X[1 + i] * sY - s_grad[i] * YX
        ) / (2.0 * s)
    return Z


def _frame(b):
    """Tangent vectors ``e_k`` as ambient arrays ``(n+1,) + grid``."""
    n = b.n
    frame = []
    for k in range(n):
        e = np.zeros((n + 1,) + b.u.shape)
        e[0] = b.Du[k]
        e[1 + k] = 1.0
        frame.append(e)
    return frame


def _inner(X, Y, s):
    return -X[0] * Y[0] + s * sum(X[1 + i] * Y[1 + i] for i in range(X.shape[0] - 1))


def _project(Y, b, frame):
    """``(a, [b^k])`` with ``Y = a nu + b^k e_k``."""
    a = -_inner(Y, b.nu, b.s)
    low = [_inner(Y, e, b.s) for e in frame]
    n = b.n
    tang = [sum(b.g_inv[k, l] * low[l] for l in range(n)) for k in range(n)]
    return a, tang


def _surface_derivative(Y, b, frame, s_grad, dom):
    """``nabla_i Y`` for an ambient vector field along the graph, one array per ``i``."""
    out = []
    grads = [gradient(Y[a], dom) for a in range(Y.shape[0])]
    for i in range(b.n):
        d = np.stack([grads[a][i] for a in range(Y.shape[0])])
        out.append(d + _gbar(Y, frame[i], b.s, b.s_tau, s_grad))
    return out


@dataclass
class _Base:
    b: object
    E: float
    frame: list
    s_grad: list
    V: np.ndarray
    xdot: np.ndarray
    phi: np.ndarray
    f2: np.ndarray
    gradF: np.ndarray
    gradH: np.ndarray
    gradvt: np.ndarray
    gradh: np.ndarray  # (n, n, n) + grid: d_l h_ij at [i, j, l]


def _base_fields(snap, cfg):
    dom, sf, p = cfg.domain, cfg.sf, cfg.params
    b = curvature_bundle(snap.u, sf, dom)
    n = b.n
    V = _velocity(b)
    xdot = np.concatenate([(b.v_tilde / b.F)[None], V])
    gradh = np.empty((n, n, n) + b.u.shape)
    for i in range(n):
        for j in range(n):
            gradh[i, j] = gradient(b.h[i, j], dom)
    return _Base(
        b=b, E=float(np.exp(p.gamma * snap.t)), frame=_frame(b), s_grad=dom.sigma_gradient(b.u),
        V=V, xdot=xdot, phi=np.asarray(sf.phi(b.u)), f2=sf.derivatives(b.u)[2],
        gradF=gradient(b.F, dom), gradH=gradient(b.H, dom), gradvt=gradient(b.v_tilde, dom),
        gradh=gradh,
    )


def _second_derivative_vector(B, Hdot, vtdot, p):
    """``y''`` as ``(a2, b2, Y2)`` from the time derivatives of ``H`` and ``v~``."""
    b, E, n, g = B.b, B.E, B.b.n, p.gamma
    F, vt, f1, H = b.F, b.v_tilde, b.f1, b.H
    a2 = (E * E / F**2) * (Hdot - n * vtdot * f1) - (E * E / F**3) * (
        n * vt * vt * B.phi + g * H * H - 2.0 * g * n * H * f1 * vt
    )
    b2 = [-(E * E / F**3) * sum(b.g_inv[k, j] * B.gradF[j] for j in range(n)) for k in range(n)]
    Y2 = a2 * b.nu
    for k in range(n):
        Y2 = Y2 + b2[k] * B.frame[k]
    return a2, b2, Y2


def build_transition_series(traj, markers: LagrangianMarkers, sf=None, params=None) -> TransitionSeries:
    """Evaluate every component of the limit table along the markers.

    Time derivatives at fixed ``x`` use a five-point stencil over the uniform
    snapshots; total derivatives add the advective term ``X_j V^j``. The
    series therefore start and end :data:`TRIM` snapshots inside the run.
    """
    cfg = traj.config
    if sf is not None and sf is not cfg.sf:
        raise ConfigurationError("series must be built with the trajectory's own scale factor")
    p = params or cfg.params
    dom = cfg.domain
    n = dom.n
    snaps, t = _uniform_snapshots(traj)
    if t.size != markers.t.size or not np.array_equal(t, markers.t):
        raise ConfigurationError("markers were advected on a different snapshot set")
    K = t.size
    if K < 2 * TRIM + 6:
        raise ConfigurationError("too few snapshots for the transition series")
    dt = cfg.record_every
    base = [_base_fields(s, cfg) for s in snaps]

    H = np.stack([B.b.H for B in base])
    vt = np.stack([B.b.v_tilde for B in base])
    hh = np.stack([B.b.h for B in base])

    # y'' as an ambient vector field, valid for 2 <= k < K-2
    Y2 = [None] * K
    Y2_parts = [None] * K
    hdot = [None] * K
    for k in range(2, K - 2):
        B = base[k]
        Hdot = _ddt(H, k, dt) + sum(B.gradH[j] * B.V[j] for j in range(n))
        vtdot = _ddt(vt, k, dt) + sum(B.gradvt[j] * B.V[j] for j in range(n))
        hd = _ddt(hh, k, dt)
        for l in range(n):
            hd = hd + B.gradh[:, :, l] * B.V[l]
        hdot[k] = hd
        a2, b2, Y = _second_derivative_vector(B, Hdot, vtdot, p)
        Y2[k], Y2_parts[k] = Y, (a2, b2)
    Y2_stack = {k: Y2[k] for k in range(2, K - 2)}

    keep = list(range(TRIM, K - TRIM))
    comps = {name: [] for name in COMPONENTS}
    h = dom.h
    for k in keep:
        B = base[k]
        b, E = B.b, B.E
        F, W = b.F, b.h_mixed
        pos = markers.x[:, k, :]
        fields = {}
        fields["y_prime.time"] = [b.v_tilde * E / F]
        fields["y_prime.space"] = [E * B.V[i] for i in range(n)]
        fields["y_prime_i.normal"] = [E * B.gradF[i] / F**2 for i in range(n)]
        fields["y_prime_i.tangential"] = [-E * W[kk, i] / F for i in range(n) for kk in range(n)]
        fields["y_ij.normal"] = [b.h[i, j] for i in range(n) for j in range(n)]
        a2, b2 = Y2_parts[k]
        fields["y2.normal"] = [a2]
        fields["y2.tangential"] = list(b2)
        # h_{ij;k} and h_ij h^l_k
        cov = []
        for i in range(n):
            for j in range(n):
                for kk in range(n):
                    c = B.gradh[i, j, kk]
                    for l in range(n):
                        c = c - b.christoffel[l, kk, i] * b.h[l, j] - b.christoffel[l, kk, j] * b.h[i, l]
                    cov.append(c)
        fields["y_ijk.normal"] = cov
        fields["y_ijk.tangential"] = [
            b.h[i, j] * W[l, kk] for i in range(n) for j in range(n) for l in range(n) for kk in range(n)
        ]
        fields["Ds_y_ij.normal"] = [E * hdot[k][i, j] for i in range(n) for j in range(n)]
        gF_up = [sum(b.g_inv[l, m] * B.gradF[m] for m in range(n)) for l in range(n)]
        fields["Ds_y_ij.tangential"] = [
            E * b.h[i, j] * gF_up[l] / F**2 for i in range(n) for j in range(n) for l in range(n)
        ]
        # nabla_i y'' projected onto the frame
        dY = _surface_derivative(Y2_stack[k], b, B.frame, B.s_grad, dom)
        nrm, tan = [], []
        for i in range(n):
            a, bt = _project(dY[i], b, B.frame)
            nrm.append(a)
            tan.extend(bt)
        fields["y2_i.normal"] = nrm
        fields["y2_i.tangential"] = tan
        # y''' = E D/dt y''
        Yt = _ddt(Y2_stack, k, dt)
        grads = [gradient(Y2_stack[k][a], dom) for a in range(n + 1)]
        adv = np.stack([sum(grads[a][j] * B.V[j] for j in range(n)) for a in range(n + 1)])
        Y3 = E * (Yt + adv + _gbar(Y2_stack[k], B.xdot, b.s, b.s_tau, B.s_grad))
        a3, b3 = _project(Y3, b, B.frame)
        fields["y3.normal"] = [a3]
        fields["y3.tangential"] = b3
        for name, flist in fields.items():
            comps[name].append(np.stack([_interp(fld, pos, h) for fld in flist], axis=-1))

    tk = t[keep]
    series = TransitionSeries(
        t=tk, s=-np.exp(-p.gamma * tk) / p.gamma, gamma=p.gamma, markers=markers,
        components={name: np.stack(v, axis=1) for name, v in comps.items()},
    )
    near = np.sum(np.abs(series.s) < 0.1 / p.gamma)
    if near < 6:
        raise ConfigurationError(
            f"s-grid too coarse near the singularity: {near} points with |s| < 0.1/gamma (need 6)"
        )
    return series


def _decay_item(s, norms, ref_index, tol):
    """Monotone decay on the last quarter and linear extrapolation to ``s = 0``."""
    if np.all(norms == 0.0):
        return {"pass": True, "measured": 0.0, "reference": 0.0, "note": "identically zero"}
    worst = None
    ok = True
    q = max(2, norms.shape[1] // 4)
    scale = float(np.max(norms))
    for mk in range(norms.shape[0]):
        y = norms[mk]
        if np.max(y) <= NOISE_FLOOR * scale:
            continue
        tail = y[-q:]
        monotone = bool(np.all(np.diff(tail) <= 0.0))
        coef = np.polyfit(s[-TAIL_POINTS:], y[-TAIL_POINTS:], 1)
        extrap = abs(float(np.polyval(coef, 0.0)))
        ref = float(y[ref_index])
        good = monotone and np.isfinite(extrap) and extrap <= tol * ref
        ok = ok and good
        ratio = extrap / ref if ref > 0 else np.inf
        if worst is None or ratio > worst["ratio"] or not good:
            worst = {"marker": mk, "measured": extrap, "reference": ref, "ratio": ratio, "monotone": monotone}
            if not good:
                break
    out = {"pass": ok}
    out.update(worst)
    return out


def _converge_item(values, spread_tol):
    """Last-``TAIL_POINTS`` spread relative to the magnitude of their mean."""
    if np.all(values == 0.0):
        return {"pass": True, "measured": 0.0, "note": "identically zero"}
    ok, worst = True, None
    scale = float(np.max(np.abs(values)))
    for mk in range(values.shape[0]):
        if np.max(np.abs(values[mk])) <= NOISE_FLOOR * scale:
            continue
        tail = values[mk, -TAIL_POINTS:, :]
        if not np.all(np.isfinite(tail)):
            return {"pass": False, "marker": mk, "note": "non-finite values"}
        mean = tail.mean(axis=0)
        mag = float(np.linalg.norm(mean))
        spread = float(np.max(np.linalg.norm(tail - mean, axis=-1)))
        if mag == 0.0 and spread == 0.0:
            continue
        rel = spread / mag if mag > 0 else np.inf
        good = rel <= spread_tol
        ok = ok and good
        if worst is None or rel > worst["measured"]:
            worst = {"marker": mk, "measured": rel, "limit": [float(x) for x in mean]}
    out = {"pass": ok}
    out.update(worst or {"measured": 0.0, "note": "identically zero"})
    return out


def check_c3_matching(series: TransitionSeries, tol: float = RELATIVE_DECAY,
                      spread_tol: float = CONVERGE_SPREAD) -> dict:
    """Verdicts for every component of the limit table plus the mirror checks.

    "zero" items must decay monotonically over the last quarter of the s-grid
    and extrapolate (linear fit on the last 5 points) to at most ``tol`` times
    their value at ``s = -0.5/gamma``; "converges" items must have a
    last-5-point spread of at most ``spread_tol`` of their magnitude.
    """
    s = series.s
    ref_index = int(np.argmin(np.abs(s + 0.5 / series.gamma)))
    report = {}
    for name, (k, part, expect) in COMPONENTS.items():
        vals = series.components[name]
        if not np.all(np.isfinite(vals)):
            item = {"pass": False, "note": "non-finite series"}
        elif expect == "zero":
            item = _decay_item(s, series.norm(name), ref_index, tol)
            item["tolerance"] = tol
        else:
            item = _converge_item(vals, spread_tol)
            item["tolerance"] = spread_tol
        item.update({"predicted": "-> 0" if expect == "zero" else "converges",
                     "derivative_order": k, "part": part, "parity": mirror_parity(name)})
        report[name] = item

    # mirror branch: exact reflection, and one-sided limits match across s = 0
    mirror_ok = True
    for name in COMPONENTS:
        s_pos, mir = series.mirrored(name)
        exact = bool(np.array_equal(mir[:, ::-1, :], mirror_parity(name) * series.components[name]))
        mirror_ok = mirror_ok and exact and bool(np.all(s_pos > 0))
    report["mirror_parity"] = {"predicted": "exact reflection", "measured": mirror_ok,
                               "tolerance": 0.0, "pass": mirror_ok}

    # first-order matching: y^0' has the same one-sided limits, y^i' opposite ones (-> 0)
    left0 = series.components["y_prime.time"][:, -1, :]
    _, mir0 = series.mirrored("y_prime.time")
    right0 = mir0[:, 0, :]
    jump0 = float(np.max(np.abs(left0 - right0)))
    lefti = series.components["y_prime.space"][:, -1, :]
    _, miri = series.mirrored("y_prime.space")
    righti = miri[:, 0, :]
    jumpi = float(np.max(np.abs(lefti + righti)))
    report["first_order_matching"] = {
        "predicted": "lim y0' equal, lim yi' opposite", "measured": {"time": jump0, "space": jumpi},
        "tolerance": 0.0, "pass": jump0 == 0.0 and jumpi == 0.0,
    }
    return report
