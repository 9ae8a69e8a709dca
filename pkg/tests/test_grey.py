"""Renormalized limit laws: phi, ratio constants, drift, martingale checks."""

import math

import numpy as np
import pytest

from csbplab.errors import ContractError, FlowDomainError, UnsupportedMechanismError
from csbplab.grey import (
    GreyRegime,
    drift_d_theta,
    limit_law,
    phi,
    ratio_constant,
    renormalized_limit_samples,
)
from csbplab.paths import PathConfig
from conftest import rng


def test_phi_at_one_is_theta(catalog, flows):
    for name in ("quadratic-super", "cp-subcritical", "power-dust"):
        mech = catalog[name].mechanism
        theta = 0.5
        assert phi(mech, theta, 1.0, flow=flows. get(name)) == theta


def test_phi_supercritical_closed_form(catalog, flows):
    """psi = l^2 - l: phi_theta(lam) = u(log lam, theta) = theta lam/(theta lam + 1 - theta)."""
    mech = catalog["quadratic-super"].mechanism
    ev = flows["quadratic-super"]
    theta = 0.5
    for lam in (0.25, 1.0, math.e, 20.0):
        want = theta * lam / (theta * lam + 1.0 - theta)
        assert phi(mech, theta, lam, flow=ev) == pytest.approx(want, rel=1e-8)
    # the spec's worked value: phi(., 1/2, e) = u(1, 1/2) = 1/(1 + e^{-1})
    assert phi(mech, theta, math.e, flow=ev) == pytest.approx(
        1.0 / (1.0 + math.exp(-1.0)), rel=1e-8)


def test_phi_monotone_concave(catalog, flows):
    mech = catalog["quadratic-super"].mechanism
    ev = flows["quadratic-super"]
    grid = np.exp(np.linspace(-2, 4, 25))
    vals = np.array([phi(mech, 0.5, float(l), flow=ev) for l in grid])
    assert np.all(np.diff(vals) > 0)
    mids = np.array([phi(mech, 0.5, float(l), flow=ev)
                     for l in (grid[:-1] + grid[1:]) / 2])
    assert np.all(mids >= (vals[:-1] + vals[1:]) / 2 - 1e-9)


def test_phi_jump_rate_limit_is_gamma(catalog, flows):
    got = phi(catalog["quadratic-super"].mechanism, 0.5, 1e8,
              flow=flows["quadratic-super"])
    assert got == pytest.approx(1.0, abs=1e-3)  # gamma = 1


def test_phi_rejects_eve_regime(catalog, flows):
    with pytest.raises(UnsupportedMechanismError):
        phi(catalog["neveu"].mechanism, 0.5, 2.0, flow=flows["neveu"])


def test_phi_theta_domain(catalog, flows):
    with pytest.raises(ContractError):
        phi(catalog["quadratic-super"].mechanism, 1.5, 2.0,
            flow=flows["quadratic-super"])  # theta must stay below gamma = 1


def test_limit_law_structure(catalog, flows):
    sup = limit_law(catalog["quadratic-super"].mechanism, 0.5,
                    flow=flows["quadratic-super"])
    assert sup.regime is GreyRegime.SUPERCRITICAL
    assert sup.drift == 0.0 and sup.killing == 0.0
    assert sup.jump_mass == pytest.approx(1.0)  # gamma
    sub = limit_law(catalog["cp-subcritical"].mechanism, 1.0,
                    flow=flows["cp-subcritical"])
    assert sub.regime is GreyRegime.FV_SUBCRITICAL
    assert sub.jump_mass == pytest.approx(0.5)  # pi((0,inf))/D = 1/2
    assert sub.drift > 0


def test_subcritical_total_jump_mass_limit(catalog, flows):
    """lim (phi(lam) - d_theta lam) = pi((0,inf))/D at lam = 1e8."""
    mech = catalog["cp-subcritical"].mechanism
    ev = flows["cp-subcritical"]
    theta = 1.0
    d = drift_d_theta(mech, theta, flow=ev)
    got = phi(mech, theta, 1e8, flow=ev) - d * 1e8
    assert got == pytest.approx(0.5, abs=1e-3)


# ---------------------------------------------------------------------------
# ratio constants
# ---------------------------------------------------------------------------


def test_ratio_trivial_and_composition(catalog, flows):
    mech = catalog["quadratic-super"].mechanism
    ev = flows["quadratic-super"]
    assert ratio_constant(mech, 0.5, 0.5, flow=ev) == 1.0
    r_ab = ratio_constant(mech, 0.2, 0.4, flow=ev)
    r_bc = ratio_constant(mech, 0.4, 0.8, flow=ev)
    r_ac = ratio_constant(mech, 0.2, 0.8, flow=ev)
    assert r_ab * r_bc == pytest.approx(r_ac, rel=1e-10)


def test_ratio_closed_form_quadratic_super(catalog, flows):
    """Partial fractions give R = theta(1-theta')/(theta'(1-theta))."""
    mech = catalog["quadratic-super"].mechanism
    ev = flows["quadratic-super"]
    for tp, th in ((0.25, 0.5), (0.1, 0.7), (0.5, 0.25)):
        want = th * (1 - tp) / (tp * (1 - th))
        assert ratio_constant(mech, tp, th, flow=ev) == pytest.approx(want, rel=1e-10)


def test_ratio_interval_cannot_cross_gamma(catalog, flows):
    with pytest.raises((FlowDomainError, ContractError)):
        ratio_constant(catalog["cp-subcritical"].mechanism, 0.5, 2.0,
                       flow=flows["quadratic-super"])


def test_ratio_theta_scaling_of_drift(catalog, flows):
    """d_theta / d_theta' equals the subcritical ratio constant."""
    mech = catalog["cp-subcritical"].mechanism
    ev = flows["cp-subcritical"]
    th, tp = 1.0, 0.4
    lhs = drift_d_theta(mech, th, flow=ev) / drift_d_theta(mech, tp, flow=ev)
    rhs = ratio_constant(mech, tp, th, flow=ev)
    assert lhs == pytest.approx(rhs, rel=1e-8)


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------


def test_drift_zero_when_xlogx_diverges(catalog, flows):
    assert drift_d_theta(catalog["logpower-nodust"].mechanism, 1.0,
                         flow=flows["logpower-nodust"]) == 0.0


def test_drift_limit_identity(catalog, flows):
    """log d_theta = lim log(e^{-Dt} u(-t, theta)): 1e-6 relative at t = 20."""
    mech = catalog["cp-subcritical"].mechanism
    ev = flows["cp-subcritical"]
    theta = 1.0
    d = drift_d_theta(mech, theta, flow=ev)
    assert d > 0
    approx_d = math.exp(-2.0 * 20.0) * ev.u(-20.0, theta)
    assert approx_d == pytest.approx(d, rel=1e-6)


def test_drift_regime_mismatch(catalog, flows):
    with pytest.raises(UnsupportedMechanismError):
        drift_d_theta(catalog["quadratic-super"].mechanism, 0.5,
                      flow=flows["quadratic-super"])


# ---------------------------------------------------------------------------
# renormalized samples
# ---------------------------------------------------------------------------


def test_grey_martingale_identity_exact_in_t(catalog, flows):
    """E exp(-u(-t,theta) Z_t) = e^{-x theta} at every t, not just in the limit."""
    mech = catalog["quadratic-super"].mechanism
    ev = flows["quadratic-super"]
    samples = renormalized_limit_samples(mech, 1.0, 0.5, [1.0, 5.0, 10.0],
                                         30_000, PathConfig(), rng(40), flow=ev)
    want = math.exp(-0.5)
    for t, arr in samples.items():
        w = np.exp(-np.minimum(arr, 700.0))
        se = w.std() / math.sqrt(len(w))
        assert abs(w.mean() - want) <= 3.5 * se, t


def test_grey_laplace_limit_law(catalog, flows):
    """At large t the law of u(-t,theta) Z_t approaches W^theta:
    E e^{-lam W_x} = e^{-x phi_theta(lam)}."""
    mech = catalog["quadratic-super"].mechanism
    ev = flows["quadratic-super"]
    samples = renormalized_limit_samples(mech, 1.0, 0.5, [10.0], 30_000,
                                         PathConfig(), rng(41), flow=ev)
    arr = samples[10.0]
    for lam in (0.5, 1.0, 2.0):
        w = np.exp(-lam * np.minimum(arr, 700.0))
        got, se = float(w.mean()), float(w.std() / math.sqrt(len(w)))
        want = math.exp(-phi(mech, 0.5, lam, flow=ev))
        assert abs(got - want) <= 3.5 * se + 2e-3, lam


def test_grey_martingale_subcritical_cp(catalog, flows):
    mech = catalog["cp-subcritical"].mechanism
    ev = flows["cp-subcritical"]
    samples = renormalized_limit_samples(mech, 1.0, 1.0, [1.0, 3.0], 20_000,
                                         PathConfig(), rng(42), flow=ev)
    want = math.exp(-1.0)
    for t, arr in samples.items():
        w = np.exp(-np.minimum(arr, 700.0))
        se = w.std() / math.sqrt(len(w))
        assert abs(w.mean() - want) <= 3.5 * se, t
