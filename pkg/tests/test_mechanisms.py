"""Mechanism algebra, psi evaluation and regime classification."""

import math

import numpy as np
import pytest

from csbplab.errors import ContractError, MechanismError
from csbplab.mechanisms import (
    EULER_GAMMA,
    Atom,
    BranchingMechanism,
    Criticality,
    ExponentialDensity,
    LogPowerDensity,
    Outcome,
    PowerDensity,
    Variation,
    classify,
    eval_psi,
    predict_regime,
    settler_mean_C,
)


# ---------------------------------------------------------------------------
# psi evaluation
# ---------------------------------------------------------------------------


def test_pure_quadratic():
    m = BranchingMechanism(alpha=0.0, beta=1.0)
    assert eval_psi(m, 2.0) == 4.0
    assert eval_psi(m, 0.0) == 0.0


def test_single_atom_closed_form():
    # an atom exactly at 1 is *not* compensated (the cutoff is r < 1 strict)
    m = BranchingMechanism(alpha=0.0, beta=0.0, levy=(Atom(1.0, 1.0),))
    assert eval_psi(m, 1.0) == pytest.approx(math.exp(-1.0) - 1.0, rel=1e-14)
    # a compensated atom below 1
    m2 = BranchingMechanism(alpha=0.0, beta=0.0, levy=(Atom(0.5, 1.0),))
    assert eval_psi(m2, 1.0) == pytest.approx(math.exp(-0.5) - 1.0 + 0.5, rel=1e-14)


def test_neveu_compensation_constant_by_quadrature(catalog):
    """The r^-2 density integrates to l log l + (euler_gamma - 1) l."""
    comp = PowerDensity(c=1.0, exponent=2.0)
    for lam in (0.5, 1.0, math.e, 7.0):
        raw = BranchingMechanism(alpha=0.0, beta=0.0, levy=(comp,))
        quad_val = raw.psi_quadrature(lam)
        assert quad_val == pytest.approx(
            lam * math.log(lam) + (EULER_GAMMA - 1.0) * lam, rel=1e-9, abs=1e-12)
    nev = catalog["neveu"].mechanism
    assert eval_psi(nev, math.e) == pytest.approx(math.e, rel=1e-12)


def test_catalog_exact_psi(catalog):
    for name, entry in catalog.items():
        if entry.exact_psi is None:
            continue
        for lam in (0.3, 1.0, 4.0, 25.0):
            assert eval_psi(entry.mechanism, lam) == pytest.approx(
                entry.exact_psi(lam), rel=1e-10, abs=1e-12), name


def test_scaling_consistency_against_brute_quadrature(catalog):
    """Closed-form / panel evaluation vs adaptive quadrature at random lam."""
    rng = np.random.default_rng(5)
    for name, entry in catalog.items():
        mech = entry.mechanism
        if not mech.levy:
            continue
        lams = np.exp(rng.uniform(-2.5, 3.5, 20))
        for lam in lams:
            a = mech.psi(float(lam))
            b = mech.psi_quadrature(float(lam))
            assert a == pytest.approx(b, rel=1e-8, abs=1e-10), (name, lam)


def test_psi_convexity_on_grid(catalog):
    grid = np.exp(np.linspace(-3, 3, 25))
    for name, entry in catalog.items():
        psi = entry.mechanism.psi(grid)
        mid = entry.mechanism.psi((grid[:-1] + grid[1:]) / 2.0)
        assert np.all(mid <= (psi[:-1] + psi[1:]) / 2.0 + 1e-9), name


def test_psi_rejects_negative_argument(catalog):
    with pytest.raises(ContractError):
        eval_psi(catalog["feller"].mechanism, -1.0)


# ---------------------------------------------------------------------------
# component validation
# ---------------------------------------------------------------------------


def test_component_validation_errors():
    with pytest.raises(MechanismError):
        BranchingMechanism(alpha=0.0, beta=0.0)  # linear
    with pytest.raises(MechanismError):
        BranchingMechanism(alpha=0.0, beta=-1.0)
    with pytest.raises(MechanismError):
        BranchingMechanism(alpha=0.0, beta=0.0,
                           levy=(PowerDensity(c=1.0, exponent=3.0),))  # (1^r^2) fails
    with pytest.raises(MechanismError):
        BranchingMechanism(alpha=0.0, beta=0.0,
                           levy=(PowerDensity(c=1.0, exponent=0.5),))  # infinite tail mass
    with pytest.raises(MechanismError):
        BranchingMechanism(alpha=0.0, beta=0.0,
                           levy=(LogPowerDensity(c=1.0, exponent=2.0, logpow=2.0, r0=1.5),))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

HAND_DERIVED = {
    # name: (variation, D, psi'(0+), gamma, conservative, persistent,
    #        xlogx_finite, pi01_finite, criticality)
    "feller": (Variation.INFINITE, None, 0.0, 0.0, True, False, True, True,
               Criticality.CRITICAL),
    "stable": (Variation.INFINITE, None, 0.0, 0.0, True, False, False, False,
               Criticality.CRITICAL),
    "neveu": (Variation.INFINITE, None, -math.inf, 1.0, True, True, False, False,
              Criticality.SUPER),
    "quadratic-super": (Variation.INFINITE, None, -1.0, 1.0, True, False, True,
                        True, Criticality.SUPER),
    "cp-subcritical": (Variation.FINITE, 2.0, 1.0, 0.0, True, True, True, True,
                       Criticality.SUB),
    "power-dust": (Variation.FINITE, 3.0, 1.0, 0.0, True, True, True, False,
                   Criticality.SUB),
    "logpower-nodust": (Variation.FINITE, 2.0, 2.0 - 1.0 / math.log(2.0), 0.0,
                        True, True, False, False, Criticality.SUB),
    "sqrt-nonconservative": (Variation.FINITE, 0.0, -math.inf, math.inf, False,
                             True, True, False, Criticality.SUPER),
}


@pytest.mark.parametrize("name", sorted(HAND_DERIVED))
def test_catalog_classification(name, catalog, reports):
    var, D, pp0, gamma, cons, pers, xlogx, pi01, crit = HAND_DERIVED[name]
    rep = reports[name]
    assert rep.variation is var
    if D is None:
        assert rep.D is None
    else:
        assert rep.D == pytest.approx(D, rel=1e-12)
    if math.isinf(pp0):
        assert rep.psi_prime_0 == pp0
    else:
        assert rep.psi_prime_0 == pytest.approx(pp0, rel=1e-10, abs=1e-12)
    if math.isinf(gamma):
        assert rep.gamma == gamma
    else:
        assert rep.gamma == pytest.approx(gamma, rel=1e-10, abs=1e-12)
    assert rep.conservative == cons
    assert rep.persistent == pers
    assert rep.xlogx_finite == xlogx
    assert rep.pi_01_finite == pi01
    assert rep.criticality is crit


def test_root_consistency(catalog, reports):
    for name, rep in reports.items():
        g = rep.gamma
        if 0 < g < math.inf:
            mech = catalog[name].mechanism
            assert abs(mech.psi(g)) < 1e-10, name
            for lam in np.linspace(1.1 * g, 10 * g, 7):
                assert mech.psi(float(lam)) > 0, name


def test_classification_invariants_catalogwide(reports):
    for name, rep in reports.items():
        rep.check_invariants()


def test_shifted_neveu_is_subcritical_conditioning(catalog):
    sh = catalog["neveu"].mechanism.shifted(1.0)
    for lam in (0.5, 2.0, 10.0):
        assert sh.psi(lam) == pytest.approx((lam + 1) * math.log(lam + 1), rel=1e-11)
    rep = classify(sh)
    assert rep.criticality is Criticality.SUB
    assert rep.conservative and rep.persistent
    assert rep.variation is Variation.INFINITE


# ---------------------------------------------------------------------------
# regime prediction
# ---------------------------------------------------------------------------


def test_predict_feller(catalog):
    pred = predict_regime(catalog["feller"].mechanism, 1.0)
    assert pred.event_a.probability == 1.0
    assert pred.event_a.outcome is Outcome.EVE_FINITE_TIME
    assert pred.event_b.outcome is Outcome.EVENT_NULL
    assert pred.event_c.outcome is Outcome.EVENT_NULL


def test_predict_quadratic_super(catalog):
    # non-persistent: the extinction branch is absorption in finite time,
    # not extinction in infinite time
    pred = predict_regime(catalog["quadratic-super"].mechanism, 1.0)
    assert pred.event_a.probability == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert pred.event_a.outcome is Outcome.EVE_FINITE_TIME
    assert pred.event_b.probability == pytest.approx(1 - math.exp(-1.0), rel=1e-12)
    assert pred.event_b.outcome is Outcome.NO_DUST_POISSON
    assert pred.event_b.mean == pytest.approx(1.0, rel=1e-10)
    assert pred.event_c.probability == 0.0


def test_predict_cp_subcritical(catalog):
    pred = predict_regime(catalog["cp-subcritical"].mechanism, 3.0)
    assert pred.event_c.probability == 1.0
    assert pred.event_c.outcome is Outcome.DUST_POISSON
    assert pred.event_c.mean == pytest.approx(1.5, rel=1e-12)


def test_predict_neveu_eve_on_both_branches(catalog):
    pred = predict_regime(catalog["neveu"].mechanism, 1.0)
    assert pred.event_b.outcome is Outcome.EVE
    assert pred.event_c.outcome is Outcome.EVE
    assert pred.event_b.probability == pytest.approx(1 - math.exp(-1.0), rel=1e-12)


def test_predict_sqrt_explodes(catalog):
    pred = predict_regime(catalog["sqrt-nonconservative"].mechanism, 1.0)
    assert pred.event_a.probability == 1.0
    assert pred.event_a.outcome is Outcome.EVE_FINITE_TIME


def test_predict_dense_regimes(catalog):
    assert predict_regime(catalog["power-dust"].mechanism, 1.0).event_c.outcome \
        is Outcome.DUST_DENSE
    assert predict_regime(catalog["logpower-nodust"].mechanism, 1.0).event_c.outcome \
        is Outcome.NO_DUST_DENSE_FV


def test_predict_supercritical_subordinator_dense():
    # conservative supercritical with gamma = inf: dense settlers, no dust
    m = BranchingMechanism(alpha=-0.5, beta=0.0, levy=(Atom(1.0, 1.0),))
    rep = classify(m)
    assert rep.gamma == math.inf and rep.conservative
    pred = predict_regime(m, 1.0, report=rep)
    assert pred.event_b.probability == 1.0
    assert pred.event_b.outcome is Outcome.NO_DUST_DENSE


def test_event_probabilities_sum_to_one(catalog):
    for entry in catalog.values():
        pred = predict_regime(entry.mechanism, 2.0)
        total = pred.event_a.probability + pred.event_b.probability \
            + pred.event_c.probability
        assert total == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# settler means
# ---------------------------------------------------------------------------


def test_settler_mean_atom(catalog):
    assert settler_mean_C(catalog["cp-subcritical"].mechanism, 3.0) \
        == pytest.approx(1.5, rel=1e-12)


def test_settler_mean_exp_moment_formula():
    # the (x/D) e^{-gamma r} integral for an atom at 1; gamma = log 2 makes
    # the exponential weight exactly 1/2
    m = BranchingMechanism(alpha=2.0, beta=0.0, levy=(Atom(1.0, 1.0),))
    assert m.exp_moment(math.log(2.0)) == pytest.approx(0.5, rel=1e-14)
    # realizable supercritical variant: gamma solves a log2 = m/2
    alpha = 2.0
    mass = 2.0 * alpha * math.log(2.0)
    sup = BranchingMechanism(alpha=alpha, beta=0.0, levy=(Atom(1.0, mass),))
    rep = classify(sup)
    assert rep.gamma == pytest.approx(math.log(2.0), rel=1e-10)
    want = 2.0 / rep.D * mass * 0.5
    assert settler_mean_C(sup, 2.0, report=rep) == pytest.approx(want, rel=1e-9)


def test_settler_mean_requires_jumps():
    m = BranchingMechanism(alpha=0.0, beta=1.0)
    with pytest.raises(ContractError):
        settler_mean_C(m, 1.0)


def test_settler_mean_power_component_quadrature():
    comp = PowerDensity(c=1.0, exponent=0.5, lo=0.0, hi=1.0)
    m = BranchingMechanism(alpha=3.0, beta=0.0, levy=(comp,))
    rep = classify(m)
    from scipy.integrate import quad

    want_int, _ = quad(lambda r: math.exp(-rep.gamma * r) * r ** -0.5, 0, 1)
    assert settler_mean_C(m, 1.0, report=rep) == pytest.approx(
        want_int / rep.D, rel=1e-9)
