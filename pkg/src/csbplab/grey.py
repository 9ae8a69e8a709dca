"""Renormalized limit laws of the frequency martingales.

For a supercritical mechanism with finite negative slope at 0 (or a
sub-critical finite-variation one), exp(-u(-t, theta) Z_t) is a martingale
whose a.s. limit defines a subordinator W^theta in the ancestor coordinate.
This module computes its Laplace exponent phi_theta, drift d_theta, ratio
constants between different theta normalizations, and draws Monte Carlo
samples of the renormalized population u(-t, theta) Z_t for distributional
checks against exp(-x phi_theta(lam)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ContractError, FlowDomainError, UnsupportedMechanismError
from .flow import FlowEvaluator
from .mechanisms import BranchingMechanism, ClassificationReport, Variation, classify
from .paths import (
    PathConfig,
    compound_poisson_params,
    cp_exact_values,
    lamperti_ensemble,
    quadratic_params,
    quadratic_step,
)


class GreyRegime(str, Enum):
    SUPERCRITICAL = "supercritical"                  # psi'(0+) in (-inf, 0)
    FV_SUBCRITICAL = "finite-variation-subcritical"  # finite variation, psi'(0+) >= 0


@dataclass(frozen=True)
class GreyLimitLaw:
    theta: float
    regime: GreyRegime
    drift: float            # d_theta
    jump_mass: float        # total mass of the jump measure of W^theta
    killing: float = 0.0    # always conservative


def _regime_of(report: ClassificationReport) -> GreyRegime:
    if report.psi_prime_0 == -math.inf:
        raise UnsupportedMechanismError(
            "no renormalized limit law exists when psi'(0+) = -inf (Eve regime)")
    if report.psi_prime_0 < 0.0:
        return GreyRegime.SUPERCRITICAL
    if report.variation is Variation.FINITE:
        return GreyRegime.FV_SUBCRITICAL
    raise UnsupportedMechanismError(
        "sub-critical limit laws require finite variation")


def _check_theta(report, regime, theta):
    if theta <= 0:
        raise ContractError("theta must be positive")
    if regime is GreyRegime.SUPERCRITICAL and not theta < report.gamma:
        raise ContractError(f"theta must lie in (0, gamma={report.gamma:g})")


def limit_law(mech: BranchingMechanism, theta: float,
              flow: Optional[FlowEvaluator] = None) -> GreyLimitLaw:
    ev = flow if flow is not None else FlowEvaluator(mech)
    rep = ev.report
    regime = _regime_of(rep)
    _check_theta(rep, regime, theta)
    if regime is GreyRegime.SUPERCRITICAL:
        return GreyLimitLaw(theta=theta, regime=regime, drift=0.0, jump_mass=rep.gamma)
    total = mech.levy_mass(0.0, math.inf)
    return GreyLimitLaw(theta=theta, regime=regime,
                        drift=drift_d_theta(mech, theta, flow=ev),
                        jump_mass=total / rep.D if math.isfinite(total) else math.inf)


def phi(mech: BranchingMechanism, theta: float, lam: float,
        flow: Optional[FlowEvaluator] = None) -> float:
    """Laplace exponent of W^theta via the flow's time substitution.

    Supercritical: phi_theta(lam) = u(log(lam)/(-psi'(0+)), theta);
    finite-variation sub-critical: phi_theta(lam) = u(-log(lam)/D, theta).
    phi_theta(1) = theta exactly.
    """
    ev = flow if flow is not None else FlowEvaluator(mech)
    rep = ev.report
    regime = _regime_of(rep)
    _check_theta(rep, regime, theta)
    if lam <= 0:
        raise ContractError("lam must be positive")
    if lam == 1.0:
        return theta
    if regime is GreyRegime.SUPERCRITICAL:
        return ev.u(math.log(lam) / -rep.psi_prime_0, theta)
    return ev.u(-math.log(lam) / rep.D, theta)


def drift_d_theta(mech: BranchingMechanism, theta: float,
                  flow: Optional[FlowEvaluator] = None) -> float:
    """Drift of W^theta in the finite-variation sub-critical regime.

    Zero when integral_{(0,1)} r log(1/r) pi(dr) diverges; otherwise
    log d_theta = log theta - integral_theta^inf (D/psi(lam) - 1/lam) dlam.
    """
    ev = flow if flow is not None else FlowEvaluator(mech)
    rep = ev.report
    if _regime_of(rep) is not GreyRegime.FV_SUBCRITICAL:
        raise UnsupportedMechanismError("d_theta is defined in the FV sub-critical regime")
    _check_theta(rep, GreyRegime.FV_SUBCRITICAL, theta)
    if not rep.xlogx_finite:
        return 0.0
    D = rep.D
    from scipy import integrate

    def f(s):
        # integrand (D/psi - 1/lam) dlam = (D/ell(lam) - 1) ds in log coords
        ell = mech.ell_log(s)
        if math.isinf(ell):
            return -1.0
        return D / ell - 1.0

    val, _ = integrate.quad(f, math.log(theta), math.inf, epsabs=1e-250,
                            epsrel=1e-11, limit=400)
    return theta * math.exp(-val)


def ratio_constant(mech: BranchingMechanism, theta_p: float, theta: float,
                   flow: Optional[FlowEvaluator] = None) -> float:
    """W^theta = R * W^{theta'} with R = exp(slope * integral_{theta'}^theta dlam/psi).

    slope is psi'(0+) in the supercritical regime and D in the
    finite-variation sub-critical regime.
    """
    ev = flow if flow is not None else FlowEvaluator(mech)
    rep = ev.report
    regime = _regime_of(rep)
    _check_theta(rep, regime, theta)
    _check_theta(rep, regime, theta_p)
    if theta_p == theta:
        return 1.0
    lo, hi = min(theta_p, theta), max(theta_p, theta)
    g = rep.gamma
    if lo < g < hi:
        raise FlowDomainError(f"integration interval ({lo:g}, {hi:g}) crosses gamma={g:g}")
    if regime is GreyRegime.SUPERCRITICAL:
        slope = rep.psi_prime_0
        integral = ev.flow_integral_below(lo, hi)
    else:
        slope = rep.D
        integral = ev.flow_integral_above(lo, hi)
    if theta_p > theta:
        integral = -integral
    return math.exp(slope * integral)


def renormalized_limit_samples(mech: BranchingMechanism, x: float, theta: float,
                               t_values, n_runs: int, cfg: PathConfig, rng,
                               flow: Optional[FlowEvaluator] = None) -> dict:
    """Samples of u(-t, theta) * Z_t for each t, for Laplace-transform tests.

    The exact martingale identity E exp(-u(-t,theta) Z_t) = exp(-x theta)
    holds at every t; as t grows the law converges to that of W^theta_x.
    """
    ev = flow if flow is not None else FlowEvaluator(mech)
    rep = ev.report
    regime = _regime_of(rep)
    _check_theta(rep, regime, theta)
    t_values = sorted(float(t) for t in t_values)

    qp = quadratic_params(mech)
    cp = compound_poisson_params(mech)
    out = {}
    if qp is not None:
        a, b = qp
        z = np.full(n_runs, float(x))
        t_prev = 0.0
        for t in t_values:
            if t > t_prev:
                z = quadratic_step(z, t - t_prev, a, b, rng)
            t_prev = t
            out[t] = ev.u(-t, theta) * z
    elif cp is not None:
        snaps = np.asarray(t_values)
        vals = np.empty((n_runs, snaps.size))
        for i in range(n_runs):
            vals[i] = cp_exact_values(mech, x, snaps, rng, cap=cfg.cap)
        for j, t in enumerate(t_values):
            out[t] = ev.u(-t, theta) * vals[:, j]
    else:
        snaps = np.asarray(t_values)
        vals, _, _ = lamperti_ensemble(mech, x, cfg, snaps, n_runs, rng, report=rep)
        for j, t in enumerate(t_values):
            out[t] = ev.u(-t, theta) * vals[:, j]
    return out
