"""Branching mechanisms and their classification.

A branching mechanism is the Levy-Khintchine function

    psi(lam) = alpha*lam + beta*lam^2
               + integral (e^{-lam r} - 1 + lam*r*1_{r<1}) pi(dr)

with beta >= 0 and a jump measure pi on (0, inf) integrating (1 ^ r^2).
The jump measure is restricted to a closed algebra of four component kinds
(atoms, power densities with optional exponential tilt, log-corrected power
densities, exponential densities).  Every convergence test the theory needs
(finite/infinite variation, conservativity, persistence, the r*log(1/r)
moment, pi((0,1))) is then decidable exactly from component metadata; numeric
quadrature is used only to evaluate psi itself and as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn

from .errors import ContractError, MechanismError, QuadratureError, UndecidableError

EULER_GAMMA = 0.5772156649015328606

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_R_FLOOR = 1e-18


def _compensated(lam, r):
    """e^{-lam r} - 1 + lam*r*1_{r<1}, stable for small lam*r."""
    x = lam * r
    small = np.where(r < 1.0, -np.expm1(-x) - x, -np.expm1(-x))
    return -small if np.ndim(small) else -float(small)


def _log_panels(lo, hi):
    """Gauss-Legendre nodes/weights on [lo, hi] in log coordinates."""
    s0, s1 = math.log(lo), math.log(hi)
    n_panels = max(4, int(math.ceil((s1 - s0) / math.log(10.0))))
    edges = np.linspace(s0, s1, n_panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    s = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    r = np.exp(s)
    return r, w * r  # weights include the dr = r ds Jacobian


class Provenance(str, Enum):
    ANALYTIC = "analytic"
    QUADRATURE = "quadrature"


# ---------------------------------------------------------------------------
# Levy-measure components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """Point mass: pi({location}) = mass."""

    location: float
    mass: float

    def validate(self):
        if not (self.location > 0 and self.mass > 0):
            raise MechanismError(f"atom needs positive location and mass, got {self}")

    # --- analytic moments (intervals are [lo, hi) throughout) --------------
    def mass_between(self, lo, hi):
        return self.mass if lo <= self.location < hi else 0.0

    def mean_between(self, lo, hi):
        return self.mass * self.location if lo <= self.location < hi else 0.0

    def second_moment_below(self, c):
        return self.mass * self.location**2 if self.location < c else 0.0

    def xlogx_finite(self):
        return True

    def mass01_finite(self):
        return True

    def small_mean_finite(self):
        return True

    def small_exponent(self):
        return None  # support bounded away from 0

    def heavy_tail_exponent(self):
        return None  # support bounded above

    def exp_moment(self, g):
        """integral e^{-g r} pi(dr)."""
        return self.mass * math.exp(-g * self.location)

    def mean_drop_below_one(self, g):
        """integral_{(0,1)} r (1 - e^{-g r}) pi(dr); finite for every component."""
        if self.location >= 1.0:
            return 0.0
        return self.mass * self.location * -math.expm1(-g * self.location)

    def tilted(self, g):
        return Atom(self.location, self.mass * math.exp(-g * self.location))

    # --- psi --------------------------------------------------------------
    def psi_integral(self, lam):
        return self.mass * _compensated(lam, self.location)

    def psi_integral_scalar(self, lam):
        r = self.location
        comp = lam * r if r < 1.0 else 0.0
        return self.mass * (math.exp(-lam * r) - 1.0 + comp)

    def psi_prime_integral(self, lam):
        r = self.location
        comp = r if r < 1.0 else 0.0
        return self.mass * (comp - r * np.exp(-lam * r))


@dataclass(frozen=True)
class PowerDensity:
    """Density c * r^{-exponent} * e^{-rate*r} on (lo, hi].

    ``rate`` (an exponential tilt, default 0) keeps the algebra closed under
    the sub-critical conditioning psi(. + gamma), which multiplies the jump
    measure by e^{-gamma r}.
    """

    c: float
    exponent: float
    lo: float = 0.0
    hi: float = math.inf
    rate: float = 0.0

    def validate(self):
        p = self.exponent
        if not (self.c > 0 and self.rate >= 0 and 0 <= self.lo < self.hi):
            raise MechanismError(f"bad power component {self}")
        if self.lo == 0.0 and p >= 3:
            raise MechanismError(
                f"power density with exponent {p} >= 3 on (0, .] fails the (1^r^2) test"
            )
        if math.isinf(self.hi) and self.rate == 0.0 and not (1 < p < 3):
            raise MechanismError(
                f"untilted power density on (., inf) needs exponent in (1, 3), got {p}"
            )

    # --- analytic moments -------------------------------------------------
    def _moment(self, k, lo, hi):
        """integral_lo^hi r^k * c r^{-p} e^{-rate r} dr (may be inf)."""
        lo = max(lo, self.lo)
        hi = min(hi, self.hi)
        if lo >= hi:
            return 0.0
        e = k - self.exponent
        if self.rate == 0.0:
            if lo == 0.0 and e <= -1:
                return math.inf
            if math.isinf(hi):
                if e >= -1:
                    return math.inf
                return -self.c * lo ** (e + 1) / (e + 1)
            if e == -1:
                return self.c * math.log(hi / lo)
            return self.c * (hi ** (e + 1) - lo ** (e + 1)) / (e + 1)
        if lo == 0.0 and e <= -1:
            return math.inf
        r, w = _log_panels(max(lo, _R_FLOOR), min(hi, 1e3 + 100.0 / self.rate))
        val = self.c * float(np.sum(w * r**e * np.exp(-self.rate * r)))
        if lo < _R_FLOOR:  # tiny analytic remainder, tilt negligible there
            val += self.c * _R_FLOOR ** (e + 1) / (e + 1)
        return val

    def mass_between(self, lo, hi):
        return self._moment(0.0, lo, hi)

    def mean_between(self, lo, hi):
        return self._moment(1.0, lo, hi)

    def second_moment_below(self, c):
        return self._moment(2.0, 0.0, c)

    def xlogx_finite(self):
        if self.lo > 0:
            return True
        return self.exponent < 2

    def mass01_finite(self):
        if self.lo > 0:
            return True
        return self.exponent < 1

    def small_mean_finite(self):
        if self.lo > 0:
            return True
        return self.exponent < 2

    def small_exponent(self):
        return self.exponent if self.lo == 0.0 else None

    def heavy_tail_exponent(self):
        """Exponent governing psi near 0 when the tail mean is infinite."""
        if math.isinf(self.hi) and self.rate == 0.0 and self.exponent <= 2:
            return self.exponent
        return None

    def exp_moment(self, g):
        if g == 0.0:
            return self.mass_between(0.0, math.inf)
        return replace(self, rate=self.rate + g).mass_between(0.0, math.inf)

    def mean_drop_below_one(self, g):
        top = min(self.hi, 1.0)
        if top <= self.lo:
            return 0.0
        r, w = _log_panels(max(self.lo, _R_FLOOR), top)
        dens = self.density_at(r)
        return float(np.sum(w * dens * r * -np.expm1(-g * r)))

    def tilted(self, g):
        return replace(self, rate=self.rate + g)

    # --- psi --------------------------------------------------------------
    def _closed_form_tail(self):
        """True when the (lo, inf) part is handled by the G_p closed forms."""
        return math.isinf(self.hi) and 1.0 < self.exponent < 3.0

    def psi_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self._closed_form_tail():
            mu, p = self.rate, self.exponent
            if mu == 0.0:
                out = self.c * _g_power(lam, p)
            else:
                d1 = _delta1_cached(p, mu)
                out = self.c * (_g_power(lam + mu, p) - _g_power(mu, p) - lam * d1)
            if self.lo > 0.0:
                out = out - _panel_psi(replace(self, lo=0.0, hi=self.lo), lam)
            return out if np.ndim(out) else float(out)
        return _panel_psi(self, lam)

    def psi_integral_scalar(self, lam):
        if not (self._closed_form_tail() and self.lo == 0.0):
            return None
        mu, p = self.rate, self.exponent
        if mu == 0.0:
            return self.c * _g_power_scalar(lam, p)
        d1 = _delta1_cached(p, mu)
        return self.c * (_g_power_scalar(lam + mu, p) - _g_power_scalar(mu, p)
                         - lam * d1)

    def psi_prime_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self._closed_form_tail():
            mu, p = self.rate, self.exponent
            if mu == 0.0:
                out = self.c * _g_power_prime(lam, p)
            else:
                d1 = _delta1_cached(p, mu)
                out = self.c * (_g_power_prime(lam + mu, p) - d1)
            if self.lo > 0.0:
                out = out - _panel_psi_prime(replace(self, lo=0.0, hi=self.lo), lam)
            return out if np.ndim(out) else float(out)
        return _panel_psi_prime(self, lam)

    def density_at(self, r):
        r = np.asarray(r, dtype=float)
        out = self.c * r ** (-self.exponent)
        if self.rate:
            out = out * np.exp(-self.rate * r)
        return np.where((r > self.lo) & (r <= self.hi), out, 0.0)


@dataclass(frozen=True)
class LogPowerDensity:
    """Density c * r^{-exponent} * (log 1/r)^{-logpow} on (0, r0], r0 < 1."""

    c: float
    exponent: float
    logpow: float
    r0: float

    def validate(self):
        if not (self.c > 0 and 0 < self.r0 < 1 and self.logpow > 0):
            raise MechanismError(f"bad log-power component {self}")
        p, q = self.exponent, self.logpow
        if p > 3 or (p == 3 and q <= 1):
            raise MechanismError(
                f"log-power density (p={p}, q={q}) fails the (1^r^2) test at 0"
            )

    def _moment(self, k, lo, hi):
        lo, hi = max(lo, 0.0), min(hi, self.r0)
        if lo >= hi:
            return 0.0
        e = k - self.exponent
        tail = 0.0
        if lo == 0.0:
            if e < -1 or (e == -1 and self.logpow <= 1):
                return math.inf
            lo = _R_FLOOR
            if e == -1:
                # integrand is (log 1/r)^{-q} d(log r): the below-floor tail
                # decays only polynomially in log r and must be added exactly
                L = math.log(1.0 / _R_FLOOR)
                tail = L ** (1.0 - self.logpow) / (self.logpow - 1.0)
        r, w = _log_panels(lo, hi)
        return self.c * (float(np.sum(w * r**e * np.log(1.0 / r) ** (-self.logpow)))
                         + tail)

    def mass_between(self, lo, hi):
        return self._moment(0.0, lo, hi)

    def mean_between(self, lo, hi):
        return self._moment(1.0, lo, hi)

    def second_moment_below(self, c):
        return self._moment(2.0, 0.0, c)

    def xlogx_finite(self):
        p, q = self.exponent, self.logpow
        return p < 2 or (p == 2 and q > 2)

    def mass01_finite(self):
        p, q = self.exponent, self.logpow
        return p < 1 or (p == 1 and q > 1)

    def small_mean_finite(self):
        p, q = self.exponent, self.logpow
        return p < 2 or (p == 2 and q > 1)

    def small_exponent(self):
        return self.exponent

    def heavy_tail_exponent(self):
        return None

    def exp_moment(self, g):
        r, w = _log_panels(_R_FLOOR, self.r0)
        dens = self.density_at(r)
        return float(np.sum(w * dens * np.exp(-g * r)))

    def mean_drop_below_one(self, g):
        r, w = _log_panels(_R_FLOOR, self.r0)
        dens = self.density_at(r)
        return float(np.sum(w * dens * r * -np.expm1(-g * r)))

    def tilted(self, g):
        # e^{-g r} ~ 1 on (0, r0]; kept exact through a numeric wrapper is not
        # needed for classification, and the conditioning path only tilts
        # mechanisms with gamma > 0, which have mass01 finite.  Reject loudly.
        raise UnsupportedTilt(self)

    def psi_integral(self, lam):
        return _panel_psi(self, lam)

    def psi_prime_integral(self, lam):
        return _panel_psi_prime(self, lam)

    def density_at(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.c * r ** (-self.exponent) * np.log(1.0 / r) ** (-self.logpow)
        return np.where((r > 0) & (r <= self.r0), out, 0.0)

    @property
    def lo(self):
        return 0.0

    @property
    def hi(self):
        return self.r0


class UnsupportedTilt(MechanismError):
    def __init__(self, component):
        super().__init__(
            "exponential tilting of a log-power component is outside the algebra; "
            "it is only required when gamma > 0, which a log-power mechanism in "
            f"this catalog never produces ({component})"
        )


@dataclass(frozen=True)
class ExponentialDensity:
    """Density c * e^{-mu r} on (0, inf)."""

    c: float
    mu: float

    def validate(self):
        if not (self.c > 0 and self.mu > 0):
            raise MechanismError(f"bad exponential component {self}")

    def _moment(self, k, lo, hi):
        lo, hi = max(lo, 0.0), hi
        if lo >= hi:
            return 0.0
        from scipy.special import gammainc

        mu = self.mu
        if math.isinf(hi):
            upper = 1.0
        else:
            upper = gammainc(k + 1, mu * hi)
        lower = gammainc(k + 1, mu * lo) if lo > 0 else 0.0
        return self.c * gamma_fn(k + 1) / mu ** (k + 1) * (upper - lower)

    def mass_between(self, lo, hi):
        return self._moment(0.0, lo, hi)

    def mean_between(self, lo, hi):
        return self._moment(1.0, lo, hi)

    def second_moment_below(self, c):
        return self._moment(2.0, 0.0, c)

    def xlogx_finite(self):
        return True

    def mass01_finite(self):
        return True

    def small_mean_finite(self):
        return True

    def small_exponent(self):
        return 0.0

    def heavy_tail_exponent(self):
        return None

    def exp_moment(self, g):
        return self.c / (self.mu + g)

    def mean_drop_below_one(self, g):
        return self.mean_between(0.0, 1.0) - self.tilted(g).mean_between(0.0, 1.0)

    def tilted(self, g):
        return ExponentialDensity(self.c, self.mu + g)

    def psi_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        mu = self.mu
        # integral (e^{-lam r} - 1) c e^{-mu r} dr = -c lam / (mu (mu + lam))
        base = -self.c * lam / (mu * (mu + lam))
        m1 = self.c * (1.0 - (1.0 + mu) * math.exp(-mu)) / mu**2  # mean below 1
        out = base + lam * m1
        return out if out.ndim else float(out)

    def psi_integral_scalar(self, lam):
        mu = self.mu
        m1 = self.c * (1.0 - (1.0 + mu) * math.exp(-mu)) / mu**2
        return -self.c * lam / (mu * (mu + lam)) + lam * m1

    def psi_prime_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        mu = self.mu
        m1 = self.c * (1.0 - (1.0 + mu) * math.exp(-mu)) / mu**2
        # integral r e^{-(mu+lam) r} c dr = c/(mu+lam)^2
        out = m1 - self.c / (mu + lam) ** 2
        return out if out.ndim else float(out)

    def density_at(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r > 0, self.c * np.exp(-self.mu * r), 0.0)

    @property
    def lo(self):
        return 0.0

    @property
    def hi(self):
        return math.inf


LevyComponent = Union[Atom, PowerDensity, LogPowerDensity, ExponentialDensity]


# closed forms for the full-line power integral --------------------------------

def _g_power(z, p):
    """integral_0^inf (e^{-zr} - 1 + zr 1_{r<1}) r^{-p} dr for p in (1,3)."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if p == 2.0:
            out = np.where(z > 0, z * np.log(z) + (EULER_GAMMA - 1.0) * z, 0.0)
        elif 1.0 < p < 2.0:
            out = -gamma_fn(2.0 - p) / (p - 1.0) * z ** (p - 1.0) + z / (2.0 - p)
        elif 2.0 < p < 3.0:
            out = gamma_fn(3.0 - p) / ((p - 1.0) * (p - 2.0)) * z ** (p - 1.0) - z / (p - 2.0)
        else:
            raise MechanismError(f"full-line power density needs exponent in (1,3), got {p}")
    return np.where(z == 0.0, 0.0, out)


def _g_power_scalar(z, p):
    if z == 0.0:
        return 0.0
    if p == 2.0:
        return z * math.log(z) + (EULER_GAMMA - 1.0) * z
    if 1.0 < p < 2.0:
        return -gamma_fn(2.0 - p) / (p - 1.0) * z ** (p - 1.0) + z / (2.0 - p)
    if (p - 1.0) * math.log(z) > 705.0:  # z^{p-1} overflows for p > 2
        return math.inf
    return gamma_fn(3.0 - p) / ((p - 1.0) * (p - 2.0)) * z ** (p - 1.0) - z / (p - 2.0)


def _g_power_prime(z, p):
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if p == 2.0:
            out = np.log(z) + 1.0
        elif 1.0 < p < 2.0:
            out = -gamma_fn(2.0 - p) * z ** (p - 2.0) + 1.0 / (2.0 - p)
        else:
            out = gamma_fn(3.0 - p) / (p - 2.0) * z ** (p - 2.0) - 1.0 / (p - 2.0)
    return out


_DELTA1_CACHE = {}


def _delta1_cached(p, mu):
    """integral_0^1 r^{1-p} (1 - e^{-mu r}) dr, cached per (p, mu)."""
    key = (p, mu)
    if key not in _DELTA1_CACHE:
        val, err = integrate.quad(
            lambda r: r ** (1.0 - p) * (-math.expm1(-mu * r)), 0.0, 1.0,
            epsabs=0.0, epsrel=1e-13, limit=200,
        )
        _DELTA1_CACHE[key] = val
    return _DELTA1_CACHE[key]


def _panel_cut(comp):
    if math.isinf(comp.hi):
        # only reachable for exponentially tilted power tails
        return 1e3 + 120.0 / comp.rate
    return comp.hi


def _panel_psi(comp, lam):
    """Compensated integral against a finite-support density, log-GL panels."""
    lam = np.asarray(lam, dtype=float)
    scalar = lam.ndim == 0
    lam2 = np.atleast_1d(lam)
    lo = max(comp.lo, _R_FLOOR)
    r, w = _log_panels(lo, _panel_cut(comp))
    dens = comp.density_at(r)
    vals = _compensated(lam2[:, None], r[None, :]) @ (w * dens)
    if comp.lo < _R_FLOOR and not isinstance(comp, LogPowerDensity):
        # series remainder of (e^{-lr}-1+lr) ~ (lr)^2/2 below the floor; for
        # log-power densities the extra (log 1/r)^{-q} factor makes it smaller
        # than the panel error and it is dropped
        e = 3.0 - comp.exponent
        vals = vals + 0.5 * lam2**2 * comp.c * _R_FLOOR**e / e
    return float(vals[0]) if scalar else vals


def _panel_psi_prime(comp, lam):
    lam = np.asarray(lam, dtype=float)
    scalar = lam.ndim == 0
    lam2 = np.atleast_1d(lam)
    lo = max(comp.lo, _R_FLOOR)
    r, w = _log_panels(lo, _panel_cut(comp))
    dens = comp.density_at(r)
    comp_term = np.where(r < 1.0, r, 0.0)
    integrand = comp_term[None, :] - r[None, :] * np.exp(-lam2[:, None] * r[None, :])
    out = integrand @ (w * dens)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Mechanism
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchingMechanism:
    alpha: float
    beta: float
    levy: tuple = ()
    name: Optional[str] = None

    def __post_init__(self):
        if self.beta < 0:
            raise MechanismError("beta must be nonnegative")
        levy = tuple(self.levy)
        object.__setattr__(self, "levy", levy)
        if self.beta == 0 and not levy:
            raise MechanismError("mechanism must be non-linear: beta > 0 or a nonempty jump measure")
        for comp in levy:
            comp.validate()

    def _scalar_ready(self):
        ok = all(getattr(c, "psi_integral_scalar", None) is not None and
                 (not isinstance(c, PowerDensity) or
                  (c._closed_form_tail() and c.lo == 0.0))
                 for c in self.levy)
        object.__setattr__(self, "_scalar_ok", ok)
        return ok

    # --- psi ----------------------------------------------------------------
    def psi(self, lam):
        """psi(lam); accepts scalars or arrays, exact 0 at lam = 0."""
        if np.ndim(lam) == 0:
            lam_f = float(lam)
            if lam_f < 0:
                raise ContractError("psi is defined on lam >= 0")
            if lam_f == 0.0:
                return 0.0
            ok = getattr(self, "_scalar_ok", None)
            if ok is None:
                ok = self._scalar_ready()
            if ok:
                out = self.alpha * lam_f
                if self.beta and lam_f < 1e154:
                    out += self.beta * lam_f * lam_f
                elif self.beta:
                    return math.inf
                for comp in self.levy:
                    out += comp.psi_integral_scalar(lam_f)
                return out
        lam_arr = np.asarray(lam, dtype=float)
        if np.any(lam_arr < 0):
            raise ContractError("psi is defined on lam >= 0")
        with np.errstate(over="ignore"):
            out = self.alpha * lam_arr
            if self.beta:  # 0 * inf would poison the beta = 0 case at huge lam
                out = out + self.beta * lam_arr**2
            for comp in self.levy:
                out = out + comp.psi_integral(lam_arr)
        out = np.where(lam_arr == 0.0, 0.0, out)
        return float(out) if np.ndim(lam) == 0 else out

    def psi_prime(self, lam):
        lam_arr = np.asarray(lam, dtype=float)
        out = self.alpha + 2.0 * self.beta * lam_arr
        for comp in self.levy:
            out = out + comp.psi_prime_integral(lam_arr)
        return float(out) if np.ndim(lam) == 0 else out

    def ell_log(self, sigma):
        """psi(e^sigma) / e^sigma, valid for every real sigma.

        Inside the float-representable band this is a direct evaluation; the
        far tails use the per-component asymptotics of psi(v)/v at 0 and at
        infinity (the flow solver integrates dv/psi in log coordinates over
        ranges far beyond float range for heavy mechanisms).  Returns +-inf
        when the slope diverges, which consumers read as integrand 0.
        """
        if -690.0 < sigma < 690.0:
            v = math.exp(sigma)
            return self.psi(v) / v
        total = self.alpha
        if sigma > 0:
            if self.beta > 0:
                return math.inf
            for comp in self.levy:
                if isinstance(comp, PowerDensity) and comp.lo == 0.0 and math.isinf(comp.hi):
                    p, mu = comp.exponent, comp.rate
                    if p == 2.0:
                        shift = _delta1_cached(p, mu) if mu > 0 else 0.0
                        total += comp.c * (sigma + EULER_GAMMA - 1.0 - shift)
                    elif p > 2.0:
                        return math.inf
                    else:
                        total += comp.mean_between(0.0, 1.0)
                elif not comp.small_mean_finite():
                    return math.inf
                else:
                    total += comp.mean_between(0.0, 1.0)
            return total
        for comp in self.levy:
            if isinstance(comp, PowerDensity) and comp.lo == 0.0 and math.isinf(comp.hi) \
                    and comp.rate == 0.0:
                p = comp.exponent
                if p == 2.0:
                    total += comp.c * (sigma + EULER_GAMMA - 1.0)
                elif p < 2.0:
                    # heavy tail: psi(v)/v ~ -c Gamma(2-p)/(p-1) v^{p-2} -> -inf
                    return -math.inf
                else:
                    t = comp.mean_between(1.0, math.inf)
                    total -= t
            else:
                t = comp.mean_between(1.0, math.inf)
                if math.isinf(t):
                    return -math.inf
                total -= t
        return total

    def psi_quadrature(self, lam, rel_tol=1e-10):
        """Brute-force evaluation of the jump integral by adaptive quadrature.

        Independent of the closed-form/panel route; used as an oracle.
        """
        total = self.alpha * lam + self.beta * lam**2
        for comp in self.levy:
            if isinstance(comp, Atom):
                total += comp.psi_integral_scalar(lam)
                continue

            def f(r, comp=comp):
                return float(comp.density_at(r)) * _compensated(lam, r)

            pts = sorted({p for p in (comp.lo, 1.0, comp.hi) if 0 < p < math.inf})
            hi = comp.hi
            try:
                if math.isinf(hi):
                    val = 0.0
                    lo = max(comp.lo, 0.0)
                    inner = [lo] + [p for p in pts if p > lo] + [max(1.0, lo) * 1.0]
                    split = max(pts) if pts else 1.0
                    v1, e1 = integrate.quad(f, lo, split, points=[p for p in pts if lo < p < split] or None,
                                            epsabs=0.0, epsrel=rel_tol, limit=400)
                    v2, e2 = integrate.quad(f, split, math.inf, epsabs=1e-300, epsrel=rel_tol, limit=400)
                    val, err = v1 + v2, e1 + e2
                else:
                    val, err = integrate.quad(
                        f, comp.lo, hi, points=[p for p in pts if comp.lo < p < hi] or None,
                        epsabs=0.0, epsrel=rel_tol, limit=400,
                    )
            except Exception as exc:  # pragma: no cover - diagnostic path
                raise QuadratureError(f"component integral failed: {exc}", component=comp)
            if abs(err) > rel_tol * max(1.0, abs(val)) * 100:
                raise QuadratureError(
                    f"component integral did not converge (err={err:g})", component=comp
                )
            total += val
        return total

    # --- aggregated jump-measure metadata ------------------------------------
    def levy_mass(self, lo, hi=math.inf):
        return sum(c.mass_between(lo, hi) for c in self.levy)

    def levy_mean(self, lo, hi):
        return sum(c.mean_between(lo, hi) for c in self.levy)

    def levy_second_moment_below(self, c):
        return sum(comp.second_moment_below(c) for comp in self.levy)

    def exp_moment(self, g):
        """integral e^{-g r} pi(dr); requires convergence (regime iii-b-1 use)."""
        return sum(c.exp_moment(g) for c in self.levy)

    def shifted(self, g):
        """The mechanism psi(. + g) for g with psi(g) = 0 (sub-critical conditioning)."""
        if g == 0.0:
            return self
        drop = sum(c.mean_drop_below_one(g) for c in self.levy)
        alpha_new = self.alpha + 2.0 * self.beta * g + drop
        return BranchingMechanism(
            alpha=alpha_new,
            beta=self.beta,
            levy=tuple(c.tilted(g) for c in self.levy),
            name=f"{self.name}|shifted({g:g})" if self.name else None,
        )


def eval_psi(mech: BranchingMechanism, lam: float) -> float:
    """psi(lam) with closed forms per component where available."""
    if lam < 0:
        raise ContractError("lam must be nonnegative")
    return mech.psi(lam)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


class Variation(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"


class Criticality(str, Enum):
    SUB = "sub"
    CRITICAL = "critical"
    SUPER = "super"


@dataclass(frozen=True)
class ClassificationReport:
    variation: Variation
    D: Optional[float]                 # present iff finite variation
    psi_prime_0: float                 # in [-inf, inf)
    gamma: float                       # in [0, inf]
    conservative: bool
    persistent: bool
    xlogx_finite: bool
    pi_01_finite: bool
    criticality: Criticality
    provenance: dict = field(default_factory=dict)

    def check_invariants(self):
        if (self.gamma > 0) != (self.psi_prime_0 < 0):
            raise UndecidableError("gamma > 0 must hold iff psi'(0+) < 0")
        if not self.persistent and self.variation is not Variation.INFINITE:
            raise UndecidableError("non-persistence requires infinite variation")
        if not self.conservative and self.psi_prime_0 != -math.inf:
            raise UndecidableError("non-conservativity requires psi'(0+) = -inf")
        if self.variation is Variation.FINITE and (self.D is None or not self.persistent):
            raise UndecidableError("finite variation requires D present and persistence")


def classify(mech: BranchingMechanism) -> ClassificationReport:
    """Decide every predicate of the regime classification analytically."""
    prov = {}

    small_mean_finite = all(c.small_mean_finite() for c in mech.levy)
    finite_var = mech.beta == 0.0 and small_mean_finite
    variation = Variation.FINITE if finite_var else Variation.INFINITE
    prov["variation"] = Provenance.ANALYTIC

    D = None
    if finite_var:
        D = mech.alpha + mech.levy_mean(0.0, 1.0)
        prov["D"] = Provenance.ANALYTIC

    # psi'(0+) = alpha - integral_{[1,inf)} r pi(dr)
    tail = 0.0
    for c in mech.levy:
        t = c.mean_between(1.0, math.inf)
        tail = math.inf if math.isinf(t) else tail + t
        if math.isinf(tail):
            break
    psi_prime_0 = -math.inf if math.isinf(tail) else mech.alpha - tail
    prov["psi_prime_0"] = Provenance.ANALYTIC

    # conservativity: automatic when psi'(0+) finite; else the heaviest
    # untilted power tail decides (exponent p < 2 -> non-conservative).
    if psi_prime_0 > -math.inf:
        conservative = True
    else:
        heavy = [c.heavy_tail_exponent() for c in mech.levy]
        heavy = [p for p in heavy if p is not None]
        if not heavy:
            raise UndecidableError(
                "psi'(0+) = -inf but no component exposes a decidable tail exponent"
            )
        conservative = min(heavy) >= 2.0
    prov["conservative"] = Provenance.ANALYTIC

    # persistence: finite variation is always persistent; infinite variation is
    # non-persistent iff beta > 0 or the steepest density exponent at 0+ exceeds 2.
    if finite_var:
        persistent = True
    elif mech.beta > 0:
        persistent = False
    else:
        small_exps = [c.small_exponent() for c in mech.levy]
        small_exps = [p for p in small_exps if p is not None]
        persistent = max(small_exps, default=0.0) <= 2.0
    prov["persistent"] = Provenance.ANALYTIC

    xlogx = all(c.xlogx_finite() for c in mech.levy)
    pi01 = all(c.mass01_finite() for c in mech.levy)
    prov["xlogx_finite"] = prov["pi_01_finite"] = Provenance.ANALYTIC

    # Malthusian root
    if psi_prime_0 == -math.inf or psi_prime_0 < 0:
        if finite_var and D is not None and D <= 0:
            gamma = math.inf  # -psi is the Laplace exponent of a subordinator
        else:
            gamma = _find_gamma(mech)
    else:
        gamma = 0.0
    prov["gamma"] = Provenance.ANALYTIC if gamma in (0.0, math.inf) else Provenance.QUADRATURE

    if psi_prime_0 > 0:
        crit = Criticality.SUB
    elif psi_prime_0 == 0:
        crit = Criticality.CRITICAL
    else:
        crit = Criticality.SUPER

    report = ClassificationReport(
        variation=variation,
        D=D,
        psi_prime_0=psi_prime_0,
        gamma=gamma,
        conservative=conservative,
        persistent=persistent,
        xlogx_finite=xlogx,
        pi_01_finite=pi01,
        criticality=crit,
        provenance=prov,
    )
    report.check_invariants()
    return report


def _find_gamma(mech, overflow=1e15):
    hi = 1.0
    while mech.psi(hi) <= 0.0:
        hi *= 4.0
        if hi > overflow:
            raise UndecidableError(
                "psi stayed nonpositive up to the overflow guard but the mechanism "
                "is not a subordinator exponent; gamma undecidable"
            )
    lo = hi / 4.0
    while mech.psi(lo) > 0.0:
        lo /= 4.0
        if lo < 1e-280:
            return 0.0
    if mech.psi(lo) == 0.0:
        return lo
    return brentq(mech.psi, lo, hi, xtol=1e-300, rtol=8.9e-16)


def classification_crosscheck(mech, report, window=(1e-10, 1e-2)):
    """Numerical quadrature indicators backing the analytic predicates.

    Returns growth diagnostics for the conservativity/persistence integrals;
    used by tests, never by the decision path.
    """
    lo, hi = window
    out = {}

    def neg_part(v):
        p = mech.psi(v)
        return max(-p, 0.0)

    if report.gamma > 0:
        i1, _ = integrate.quad(lambda s: math.exp(s) / max(neg_part(math.exp(s)), 1e-300),
                               math.log(lo), math.log(hi), limit=400)
        i2, _ = integrate.quad(lambda s: math.exp(s) / max(neg_part(math.exp(s)), 1e-300),
                               math.log(lo * 1e-6), math.log(hi), limit=400)
        out["conservative_growth"] = i2 - i1  # keeps growing iff divergent
    g = report.gamma if math.isfinite(report.gamma) else 1.0
    if report.gamma < math.inf:
        a = max(2.0 * g, 1.0)
        j1, _ = integrate.quad(lambda s: math.exp(s) / mech.psi(math.exp(s)),
                               math.log(a), math.log(a * 1e4), limit=400)
        j2, _ = integrate.quad(lambda s: math.exp(s) / mech.psi(math.exp(s)),
                               math.log(a * 1e4), math.log(a * 1e8), limit=400)
        out["persistent_growth"] = j2 / max(j1, 1e-300)
    return out


# ---------------------------------------------------------------------------
# Regime prediction (the limit-structure decision tree)
# ---------------------------------------------------------------------------


class Outcome(str, Enum):
    EVE_FINITE_TIME = "EveFiniteTime"
    EVE = "Eve"
    NO_DUST_POISSON = "NoDustPoissonSettlers"
    NO_DUST_DENSE = "NoDustDenseSettlers"
    DUST_POISSON = "DustPoissonSettlers"
    DUST_DENSE = "DustDenseSettlers"
    NO_DUST_DENSE_FV = "NoDustDense"
    EVENT_NULL = "EventNull"


@dataclass(frozen=True)
class EventPrediction:
    probability: float
    outcome: Outcome
    mean: Optional[float] = None


@dataclass(frozen=True)
class RegimePrediction:
    x: float
    event_a: EventPrediction   # absorption in finite time
    event_b: EventPrediction   # explosion in infinite time
    event_c: EventPrediction   # extinction in infinite time
    report: ClassificationReport

    def as_dict(self):
        d = {}
        for key, ev in (("A", self.event_a), ("B", self.event_b), ("C", self.event_c)):
            d[key] = {"probability": ev.probability, "outcome": ev.outcome.value}
            if ev.mean is not None:
                d[key]["mean"] = ev.mean
        return d


def predict_regime(mech: BranchingMechanism, x: float,
                   report: Optional[ClassificationReport] = None) -> RegimePrediction:
    if x <= 0:
        raise ContractError("x must be positive")
    rep = report if report is not None else classify(mech)

    p_ext_limit = math.exp(-rep.gamma * x) if math.isfinite(rep.gamma) else 0.0
    if rep.gamma == 0.0:
        p_ext_limit = 1.0

    p_a = (p_ext_limit if not rep.persistent else 0.0) + \
          ((1.0 - p_ext_limit) if not rep.conservative else 0.0)
    p_b = (1.0 - p_ext_limit) if rep.conservative else 0.0
    p_c = p_ext_limit if rep.persistent else 0.0

    ev_a = EventPrediction(p_a, Outcome.EVE_FINITE_TIME if p_a > 0 else Outcome.EVENT_NULL)

    if p_b == 0.0:
        ev_b = EventPrediction(0.0, Outcome.EVENT_NULL)
    elif rep.psi_prime_0 == -math.inf:
        ev_b = EventPrediction(p_b, Outcome.EVE)
    elif math.isfinite(rep.gamma):
        ev_b = EventPrediction(p_b, Outcome.NO_DUST_POISSON, mean=x * rep.gamma)
    else:
        ev_b = EventPrediction(p_b, Outcome.NO_DUST_DENSE)

    if p_c == 0.0:
        ev_c = EventPrediction(0.0, Outcome.EVENT_NULL)
    elif rep.variation is Variation.INFINITE:
        ev_c = EventPrediction(p_c, Outcome.EVE)
    elif rep.pi_01_finite:
        ev_c = EventPrediction(p_c, Outcome.DUST_POISSON, mean=settler_mean_C(mech, x, rep))
    elif rep.xlogx_finite:
        ev_c = EventPrediction(p_c, Outcome.DUST_DENSE)
    else:
        ev_c = EventPrediction(p_c, Outcome.NO_DUST_DENSE_FV)

    total = p_a + p_b + p_c
    if abs(total - 1.0) > 1e-12:
        raise UndecidableError(f"event probabilities sum to {total}, not 1")
    return RegimePrediction(x=x, event_a=ev_a, event_b=ev_b, event_c=ev_c, report=rep)


def settler_mean_C(mech: BranchingMechanism, x: float,
                   report: Optional[ClassificationReport] = None) -> float:
    """(x / D) * integral e^{-gamma r} pi(dr) -- settler mean in regime (iii-b-1)."""
    rep = report if report is not None else classify(mech)
    if rep.D is None:
        raise ContractError("settler mean requires a finite-variation mechanism (D present)")
    if not mech.levy:
        raise ContractError("settler mean needs a nonempty jump measure")
    g = rep.gamma
    if not math.isfinite(g):
        raise ContractError("settler mean requires gamma < inf")
    return x / rep.D * mech.exp_moment(g)
