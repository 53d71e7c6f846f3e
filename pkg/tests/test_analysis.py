import copy

import numpy as np
import pytest
from conftest import PERTURBATION, flow_config
from hypothesis import given, settings
from hypothesis import strategies as st

from arwimcf.analysis import (
    CLAIM_NAMES,
    check_convergence_claims,
    check_f_u_limit,
    default_window,
    fit_rate,
    limit_verdict,
)
from arwimcf.cosmology import FluidConfig, solve_friedmann
from arwimcf.errors import AnalysisError
from arwimcf.flow import FlowConfig, InitialData, run
from arwimcf.geometry import SpatialDomain

T = np.linspace(0.0, 12.0, 121)


def test_fit_rate_exact_exponential():
    fit = fit_rate(T, 3.0 * np.exp(-0.75 * T), window=(6, 12), name="x", predicted=0.75)
    assert fit.rate == pytest.approx(0.75, rel=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 61 and fit.window == (6.0, 12.0)
    assert fit.rel_error == pytest.approx(0.0, abs=1e-11)
    assert fit.to_dict()["rel_error"] == fit.rel_error


def test_fit_rate_constant_series():
    fit = fit_rate(T, np.full_like(T, 2.0))
    assert fit.rate == 0.0 and fit.r2 == 1.0 and fit.rel_error is None


@settings(max_examples=50, deadline=None)
@given(rate=st.floats(-2, 2), scale=st.floats(1e-6, 1e6), shift=st.floats(-5, 5))
def test_fit_rate_invariances(rate, scale, shift):
    """Scaling the values or shifting time leaves the fitted rate unchanged."""
    base = fit_rate(T, np.exp(-rate * T) * (1 + 0.1 * np.sin(T)))
    scaled = fit_rate(T + shift, scale * np.exp(-rate * T) * (1 + 0.1 * np.sin(T)))
    assert scaled.rate == pytest.approx(base.rate, rel=1e-9, abs=1e-9)
    assert scaled.r2 == pytest.approx(base.r2, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("values,window", [
    (np.exp(-T), (11.85, 12.0)),
    (np.where(T > 8, -1.0, 1.0), None),
    (np.zeros_like(T), None),
])
def test_fit_rate_rejects_bad_input(values, window):
    with pytest.raises(AnalysisError):
        fit_rate(T, values, window)


def test_fit_rate_rejects_degenerate_time():
    with pytest.raises(AnalysisError):
        fit_rate(np.ones(5), np.ones(5))


def test_limit_verdict():
    vals = 1.0 + np.exp(-T)
    lv = limit_verdict("x", vals, 1.0)
    assert lv.limit == pytest.approx(1.0, abs=1e-5) and lv.monotone_tail
    assert not limit_verdict("x", 1.0 + 0.1 * np.sin(T), 1.0).monotone_tail
    with pytest.raises(AnalysisError):
        limit_verdict("x", vals, 1.0, k=2)
    with pytest.raises(AnalysisError):
        limit_verdict("x", vals[:2], 1.0)


def test_default_window():
    assert default_window(12.0) == (6.0, 12.0)


def test_homogeneous_claims(homogeneous_run):
    claims = check_convergence_claims(homogeneous_run)
    assert set(claims) == set(CLAIM_NAMES) - {"breve_umbilicity_rate"}
    for name, c in claims.items():
        assert c["pass"], (name, c)
        assert {"predicted", "measured", "tolerance", "pass"} <= set(c)
    assert claims["gradient_decay_rate"]["note"] == "identically zero"
    assert claims["utilde_convergence"]["measured"] <= 1e-6


def test_perturbed_claims(perturbed_run):
    claims = check_convergence_claims(perturbed_run)
    for name in ("utilde_bounds", "utilde_convergence", "gradient_decay_rate", "curvature_scaled_bounded",
                 "F_scaled_bounds", "metric_limit", "umbilicity_rate", "fu_limit", "F_scaled_limit"):
        assert claims[name]["pass"], (name, claims[name])


def test_enabled_subset_and_unknown(perturbed_run):
    claims = check_convergence_claims(perturbed_run, enabled=["fu_limit", "metric_limit"])
    assert set(claims) == {"fu_limit", "metric_limit"}
    with pytest.raises(AnalysisError, match="unknown"):
        check_convergence_claims(perturbed_run, enabled=["nonsense"])


def test_window_too_small(perturbed_run):
    with pytest.raises(AnalysisError):
        check_convergence_claims(perturbed_run, window=(11.9, 12.0))


def test_claims_do_not_modify_trajectory(perturbed_run):
    before = copy.deepcopy(perturbed_run.diagnostics)
    u_before = perturbed_run.final.u.copy()
    a = check_convergence_claims(perturbed_run)
    b = check_convergence_claims(perturbed_run)
    assert a == b
    assert [r.values() for r in before] == [r.values() for r in perturbed_run.diagnostics]
    assert np.array_equal(u_before, perturbed_run.final.u)


def test_f_u_limit_canonical_is_exact(perturbed_run):
    c = check_f_u_limit(perturbed_run)
    assert c["pass"] and c["measured"] <= 1e-12


def test_f_u_limit_perturbed_background(perturbed_background_run):
    c = check_f_u_limit(perturbed_background_run)
    assert c["pass"], c


def test_f_u_limit_fluid_background():
    sol = solve_friedmann(FluidConfig(2, 2.0, R_bar=0.3))
    cfg = FlowConfig(sol.sf.params, sol.sf, SpatialDomain(2, 16), InitialData(-0.5, PERTURBATION), t_end=12.0)
    c = check_f_u_limit(run(cfg))
    gamma = sol.sf.params.gamma
    assert c["predicted"] == 2 * gamma
    assert abs(c["measured"] - 2 * gamma) <= 0.2 * 2 * gamma


def test_claims_need_diagnostics():
    traj = run(flow_config(N=16, t_end=0.2))
    traj.diagnostics.clear()
    with pytest.raises(AnalysisError):
        check_convergence_claims(traj)
