"""Trajectory simulation for branching processes.

Engines, in decreasing order of fidelity:

* exact transition samplers where the flow has closed Laplace structure:
  - quadratic mechanisms a*l + b*l^2 (compound Poisson-gamma transitions;
    the classic diffusion case is alpha = 0),
  - `l log l`-type mechanisms (one-sided stable multiplicative transitions,
    simulated in log scale so doubly-exponential growth stays representable),
  - finite-activity finite-variation mechanisms (piecewise-deterministic
    jump process, simulated event by event);
* the Lamperti-Euler scheme for everything else: operator splitting of the
  time change Z_{t+h} = max(0, Z_t + DX(Z_t h)), where DX(s) is a Levy
  increment with exponent psi over Levy time s, built from drift, a Gaussian
  of variance 2*beta*s, exact jumps >= delta, and a Gaussian substitute for
  the compensated small jumps (variance s * integral_{(0,delta)} r^2 pi(dr)).

Persistent mechanisms never absorb at 0: discretization can cross zero
spuriously, so the scheme clamps at a tiny positivity floor instead.
Explosion is detected by cap-crossing and is only declared as absorption for
non-conservative mechanisms; conservative paths saturate at the cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import ContractError, UnsupportedMechanismError
from .kernels.common import ABSORB_EXPLODED, ABSORB_EXTINCT, ABSORB_NONE
from .mechanisms import (
    Atom,
    BranchingMechanism,
    ClassificationReport,
    ExponentialDensity,
    LogPowerDensity,
    PowerDensity,
    classify,
)

POSITIVITY_FLOOR = 1e-300


@dataclass(frozen=True)
class PathConfig:
    h: float = 1e-3              # grid step
    delta: float = 1e-3          # small-jump cutoff
    horizon: float = 1.0
    cap: float = 1e12            # overflow cap: beyond this a path counts as exploded
    seed: int = 0

    def validate(self, x0=0.0):
        if not (self.h > 0 and self.delta > 0 and self.horizon > 0):
            raise ContractError("h, delta and horizon must be positive")
        if self.delta >= 1.0:
            raise ContractError("small-jump cutoff must lie in (0, 1)")
        if self.cap <= x0:
            raise ContractError("overflow cap must exceed the initial mass")


@dataclass
class CsbpPath:
    times: np.ndarray
    values: np.ndarray
    absorption: Optional[str] = None      # None | "extinct" | "exploded"
    absorption_time: Optional[float] = None

    def value_at(self, t):
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(i, 0)])


# ---------------------------------------------------------------------------
# exact transition samplers
# ---------------------------------------------------------------------------


def feller_step(z, t, beta, rng):
    """Exact transition of psi(l) = beta l^2 over time t.

    Draws N ~ Poisson(z/(beta t)) and returns a Gamma(N, beta t) sum of
    exponentials; z = 0 stays 0.  E exp(-l Z_t) = exp(-z l/(1 + beta l t)).
    """
    return quadratic_step(z, t, 0.0, beta, rng)


def quadratic_step(z, t, alpha, beta, rng):
    """Exact transition for psi(l) = alpha l + beta l^2 (beta > 0).

    u(t,l) = A l/(1 + B l) with A = e^{-alpha t}, B = beta(1 - e^{-alpha t})/alpha
    (B = beta t when alpha = 0), which is the Laplace exponent of a compound
    Poisson sum: N ~ Poisson(z A/B) exponentials of mean B.
    """
    if beta <= 0:
        raise ContractError("quadratic_step needs beta > 0")
    z = np.asarray(z, dtype=float)
    if alpha == 0.0:
        B = beta * t
        A = 1.0
    else:
        A = math.exp(-alpha * t)
        B = beta * -math.expm1(-alpha * t) / alpha
    n = rng.poisson(z * (A / B))
    out = rng.gamma(n, B)
    out = np.where(n == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def quadratic_exact_params(alpha, beta, t):
    """(A, B) of the transition transform u(t,l) = A l / (1 + B l)."""
    if alpha == 0.0:
        return 1.0, beta * t
    return math.exp(-alpha * t), beta * -math.expm1(-alpha * t) / alpha


def stable_positive(c, rng, size=None):
    """One-sided stable variable S with E e^{-l S} = e^{-l^c}, c in (0,1).

    Kanter's representation: S = (a(U)/E)^{(1-c)/c} with U uniform on (0,pi)
    and E standard exponential.
    """
    u = rng.uniform(0.0, math.pi, size)
    e = rng.exponential(1.0, size)
    log_a = (c * np.log(np.sin(c * u)) + (1.0 - c) * np.log(np.sin((1.0 - c) * u))
             - np.log(np.sin(u))) / (1.0 - c)
    return np.exp((1.0 - c) / c * (log_a - np.log(e)))


def loglog_step_log(log_z, t, k, a, rng):
    """Exact transition of psi(l) = k l log l + a l, applied to log-masses.

    The log flow is linear: u(t,l) = C_t l^{c_t} with c_t = e^{-kt} and
    C_t = exp(-(a/k)(1 - c_t)), so Z_t = (z C_t)^{1/c_t} S_{c_t} with S a
    one-sided stable variable.  Everything stays in log scale: exploding
    paths exceed float range long before their frequencies settle otherwise.
    """
    log_z = np.asarray(log_z, dtype=float)
    c = math.exp(-k * t)
    log_C = -(a / k) * -math.expm1(-k * t)
    u = rng.uniform(0.0, math.pi, log_z.shape if log_z.ndim else None)
    e = rng.exponential(1.0, log_z.shape if log_z.ndim else None)
    log_a_u = (c * np.log(np.sin(c * u)) + (1.0 - c) * np.log(np.sin((1.0 - c) * u))
               - np.log(np.sin(u))) / (1.0 - c)
    log_s = (1.0 - c) / c * (log_a_u - np.log(e))
    out = (log_z + log_C) / c + log_s
    return float(out) if out.ndim == 0 else out


def loglog_params(mech):
    """(k, a) with psi(l) = k l log l + a l, or None if not of that form."""
    if mech.beta != 0.0 or len(mech.levy) != 1:
        return None
    comp = mech.levy[0]
    if not isinstance(comp, PowerDensity):
        return None
    if comp.exponent != 2.0 or comp.lo != 0.0 or not math.isinf(comp.hi) or comp.rate != 0.0:
        return None
    from .mechanisms import EULER_GAMMA

    k = comp.c
    a = mech.alpha + k * (EULER_GAMMA - 1.0)
    return k, a


def quadratic_params(mech):
    if mech.beta > 0.0 and not mech.levy:
        return mech.alpha, mech.beta
    return None


def compound_poisson_params(mech):
    """(D, rate, sampler) for finite-activity finite-variation mechanisms."""
    if mech.beta != 0.0:
        return None
    rate = mech.levy_mass(0.0, math.inf)
    if not math.isfinite(rate) or rate <= 0.0:
        return None
    small_mean = mech.levy_mean(0.0, 1.0)
    if math.isinf(small_mean):
        return None
    D = mech.alpha + small_mean
    tab = build_jump_tables(mech, delta=0.0)

    def sampler(rng, size=None):
        return tab.sample(rng, size)

    return D, rate, sampler


# ---------------------------------------------------------------------------
# jump tables for the Lamperti kernels
# ---------------------------------------------------------------------------


@dataclass
class JumpTables:
    kinds: np.ndarray
    params: np.ndarray
    cumw: np.ndarray
    rate: float

    def sample(self, rng, size=None):
        from .kernels import numpy_impl

        n = 1 if size is None else int(size)
        vals = numpy_impl._sample_jumps(rng, n, self.kinds, self.params, self.cumw)
        return float(vals[0]) if size is None else vals


def build_jump_tables(mech: BranchingMechanism, delta: float) -> JumpTables:
    rows_kind, rows_par, weights = [], [], []
    for comp in mech.levy:
        if isinstance(comp, Atom):
            if comp.location >= delta:
                rows_kind.append(0)
                rows_par.append([comp.location, 0, 0, 0, 0])
                weights.append(comp.mass)
        elif isinstance(comp, PowerDensity):
            if comp.rate != 0.0:
                raise UnsupportedMechanismError(
                    "path simulation of exponentially tilted power components "
                    "is not implemented (tilts only arise from conditioning)")
            lo = max(comp.lo, delta)
            if lo >= comp.hi:
                continue
            w = comp.mass_between(lo, math.inf)
            p = comp.exponent
            if p == 1.0:
                rows_kind.append(2)
                rows_par.append([math.log(lo), math.log(comp.hi / lo), 0, 0, 0])
            else:
                A = lo ** (1.0 - p)
                B = (comp.hi ** (1.0 - p) if math.isfinite(comp.hi) else
                     (0.0 if p > 1 else math.inf)) - A
                rows_kind.append(1)
                rows_par.append([A, B, 1.0 / (1.0 - p), 0, 0])
            weights.append(w)
        elif isinstance(comp, LogPowerDensity):
            lo = max(delta, 0.0)
            if lo >= comp.r0:
                continue
            if lo == 0.0:
                raise UnsupportedMechanismError(
                    "log-power components need a positive small-jump cutoff")
            w = comp.mass_between(lo, math.inf)
            p = comp.exponent
            A = lo ** (1.0 - p)
            B = comp.r0 ** (1.0 - p) - A
            rows_kind.append(4)
            rows_par.append([A, B, 1.0 / (1.0 - p), comp.logpow, math.log(1.0 / comp.r0)])
            weights.append(w)
        elif isinstance(comp, ExponentialDensity):
            w = comp.mass_between(delta, math.inf)
            rows_kind.append(3)
            rows_par.append([delta, 1.0 / comp.mu, 0, 0, 0])
            weights.append(w)
    if not weights:
        return JumpTables(np.zeros(1, dtype=np.int64), np.zeros((1, 5)),
                          np.ones(1), 0.0)
    w = np.asarray(weights, dtype=float)
    rate = float(w.sum())
    return JumpTables(np.asarray(rows_kind, dtype=np.int64),
                      np.asarray(rows_par, dtype=float),
                      np.cumsum(w) / rate, rate)


@dataclass
class LevyIncrementModel:
    """Precomputed pieces of the Levy increment for one (mechanism, delta).

    The small-jump Gaussian substitute carries variance sigma^2(delta) =
    integral_{(0,delta)} r^2 pi(dr), applied only when the classic validity
    check sigma(delta) >= 3 delta holds (otherwise small jumps are truncated
    and their zero-mean compensated contribution dropped, bias documented),
    and only on paths whose mass keeps the per-step noise at or below the 1%
    scale (``ar_floor``): below that the substitute's noise rivals the mass
    itself and would stall the exponential decay of near-extinct paths.
    """

    drift0: float
    gauss_core: float               # 2 beta, the true diffusion part
    gauss_sub: float                # small-jump substitute variance
    tables: JumpTables
    small_jump_gaussian: bool       # Asmussen-Rosinski validity sigma(delta) >= 3 delta
    sigma2_delta: float

    @classmethod
    def build(cls, mech: BranchingMechanism, delta: float):
        drift0 = mech.alpha + mech.levy_mean(delta, 1.0)
        sigma2 = mech.levy_second_moment_below(delta)
        ar_ok = math.sqrt(sigma2) >= 3.0 * delta if sigma2 > 0 else False
        return cls(drift0=drift0, gauss_core=2.0 * mech.beta,
                   gauss_sub=sigma2 if ar_ok else 0.0,
                   tables=build_jump_tables(mech, delta),
                   small_jump_gaussian=ar_ok, sigma2_delta=sigma2)

    def ar_floor(self, h):
        # per-step substitute noise sqrt(gvar z h) <= z/100  <=>  z >= 1e4 gvar h
        return 1e4 * self.gauss_sub * h


# ---------------------------------------------------------------------------
# Lamperti paths
# ---------------------------------------------------------------------------


def _snap_steps(cfg, snap_times):
    steps = np.asarray(np.round(np.asarray(snap_times, dtype=float) / cfg.h), dtype=np.int64)
    if np.any(np.abs(steps * cfg.h - np.asarray(snap_times)) > 1e-9 * max(cfg.h, 1.0)):
        raise ContractError("snapshot times must lie on the step grid")
    return steps


def lamperti_ensemble(mech, x0, cfg: PathConfig, snap_times, n_paths, rng,
                      report: Optional[ClassificationReport] = None):
    """Simulate n_paths Lamperti-Euler paths; values at snap_times.

    Returns (values[n_paths, n_snaps], absorb_kind int8, absorb_time).
    absorb_kind: 0 none, 1 extinct, 2 exploded.
    """
    rep = report if report is not None else classify(mech)
    cfg.validate(x0=np.max(x0))
    model = LevyIncrementModel.build(mech, cfg.delta)
    steps = _snap_steps(cfg, snap_times)
    n_steps = int(steps.max()) if steps.size else 0
    z0 = np.full(n_paths, x0, dtype=float) if np.ndim(x0) == 0 else np.asarray(x0, float)
    return kernels.lamperti_ensemble(
        rng, z0, n_steps, cfg.h, steps,
        model.drift0, model.gauss_core, model.gauss_sub, model.ar_floor(cfg.h),
        model.tables.rate,
        model.tables.kinds, model.tables.params, model.tables.cumw,
        not rep.persistent, POSITIVITY_FLOOR, cfg.cap,
        not rep.conservative)


def lamperti_path(mech, x0, cfg: PathConfig, rng=None,
                  report: Optional[ClassificationReport] = None) -> CsbpPath:
    """One full-grid Lamperti path on [0, horizon]."""
    if x0 <= 0:
        raise ContractError("x0 must be positive")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n_steps = int(round(cfg.horizon / cfg.h))
    times = np.arange(n_steps + 1) * cfg.h
    vals, kind, at = lamperti_ensemble(mech, x0, cfg, times, 1, rng, report=report)
    absorption = {ABSORB_NONE: None, ABSORB_EXTINCT: "extinct",
                  ABSORB_EXPLODED: "exploded"}[int(kind[0])]
    t_abs = float(at[0]) if absorption else None
    return CsbpPath(times=times, values=vals[0], absorption=absorption,
                    absorption_time=t_abs)


# ---------------------------------------------------------------------------
# piecewise-deterministic exact paths (finite-activity finite variation)
# ---------------------------------------------------------------------------


def cp_exact_values(mech, z0, snap_times, rng, cap=1e12, t0=0.0):
    """Exact values of a finite-activity FV path at snap_times (>= t0).

    Between jumps dZ/dt = -D Z; jumps arrive at rate Z_t * m.  Jump waiting
    times are sampled by inverting the integrated hazard in closed form.
    """
    par = compound_poisson_params(mech)
    if par is None:
        raise UnsupportedMechanismError("mechanism is not finite-activity finite-variation")
    D, m, sampler = par
    return pdmp_values(D, m, sampler, z0, snap_times, rng, cap=cap, t0=t0)


def truncated_fv_params(mech, report, delta):
    """(D, rate, sampler) for the delta-truncated jump process of a FV mechanism.

    Dropping jumps below delta keeps the decay rate D exact (the linear term
    is untouched) and loses mass at rate Z * integral_{(0,delta)} r pi(dr);
    the loss is a common multiplicative-scale bias across a population's
    atoms, so frequency structure is barely affected.
    """
    if report.D is None:
        raise UnsupportedMechanismError("delta-truncated evolution needs finite variation")
    tab = build_jump_tables(mech, delta)

    def sampler(rng, size=None):
        return tab.sample(rng, size)

    return report.D, tab.rate, sampler


def pdmp_values(D, m, sampler, z0, snap_times, rng, cap=1e12, t0=0.0):
    """Piecewise-deterministic path: exponential decay at rate D, jumps at rate Z m."""
    snap_times = np.asarray(snap_times, dtype=float)
    out = np.empty(snap_times.shape)
    t, z = t0, float(z0)
    i = 0
    while i < snap_times.size:
        if m <= 0.0 or z * m <= 0.0:
            w = math.inf
            e = 0.0
        else:
            e = rng.exponential(1.0)
            if D > 0.0:
                h_max = z * m / D
                if e >= h_max:
                    w = math.inf
                else:
                    w = -math.log1p(-D * e / (z * m)) / D
            elif D == 0.0:
                w = e / (z * m)
            else:
                w = math.log1p(-D * e / (z * m)) / -D
        t_jump = t + w
        while i < snap_times.size and snap_times[i] < t_jump:
            out[i] = z * math.exp(-D * (snap_times[i] - t))
            i += 1
        if i >= snap_times.size:
            break
        z = z * math.exp(-D * w) + sampler(rng)
        t = t_jump
        if z >= cap:
            out[i:] = cap
            break
    return out


# ---------------------------------------------------------------------------
# dominating coupling (finite variation, D > 0)
# ---------------------------------------------------------------------------


def dominating_coupling(mech, x0, cfg: PathConfig, rng=None,
                        report: Optional[ClassificationReport] = None):
    """Coupled (Z, Z*) driven by one Levy jump stream; Z* dominates sup Z.

    Z is the time change of X_s = x0 - D s + (jumps); Z* that of the
    subordinator X*_s = X_s + D s, whose mechanism is psi - D l.  Requires a
    finite-variation mechanism with finite jump rate and D > 0.
    """
    rep = report if report is not None else classify(mech)
    if rep.D is None or rep.D <= 0:
        raise ContractError("dominating coupling needs finite variation and D > 0")
    par = compound_poisson_params(mech)
    if par is None:
        raise UnsupportedMechanismError(
            "dominating coupling is implemented for finite-activity jump measures")
    D, m, sampler = par
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n_steps = int(round(cfg.horizon / cfg.h))
    times = np.arange(n_steps + 1) * cfg.h
    return _coupled_walk(times, x0, D, m, sampler, rng)


def _coupled_walk(times, x0, D, m, sampler, rng):
    jumps_s = []
    jumps_r = []
    s_end = 0.0

    def ensure(k):
        nonlocal s_end
        while len(jumps_s) <= k:
            s_end += rng.exponential(1.0 / m)
            jumps_s.append(s_end)
            jumps_r.append(sampler(rng))

    def run(drifted):
        vals = np.empty(times.size)
        vals[0] = x0
        x, s0, t0, j = x0, 0.0, 0.0, 0
        for i in range(1, times.size):
            t_out = times[i]
            while True:
                ensure(j)
                s_next = jumps_s[j]
                if drifted:
                    x_end = x - D * (s_next - s0)
                    seg_dt = math.inf if x_end <= 0.0 else math.log(x / x_end) / D
                else:
                    seg_dt = (s_next - s0) / x
                if t0 + seg_dt > t_out:
                    break
                # jump happens before t_out
                if drifted:
                    x = x - D * (s_next - s0)
                x = x + jumps_r[j]
                t0 += seg_dt
                s0 = s_next
                j += 1
            dt = t_out - t0
            if drifted:
                vals[i] = x * math.exp(-D * dt)
            else:
                vals[i] = x
        return vals

    z = run(drifted=True)
    z_star = run(drifted=False)
    p1 = CsbpPath(times=times, values=z)
    p2 = CsbpPath(times=times, values=z_star)
    return p1, p2


# ---------------------------------------------------------------------------
# exact absorption-time sampling
# ---------------------------------------------------------------------------


def sample_extinction_times(flow_ev, z, n, rng, v_inverse=None):
    """n extinction times of paths started at z (inf when never extinct).

    P_z(zeta_0 <= u) = exp(-z v(u)), so with E standard exponential the time
    is v^{-1}(E / z), infinite when E/z <= gamma.  v^{-1}(y) is the direct
    quadrature integral_y^inf dr/psi(r) unless a (vectorized) closed form is
    supplied.
    """
    rep = flow_ev.report
    if rep.persistent:
        raise UnsupportedMechanismError("extinction times need a non-persistent mechanism")
    g = rep.gamma
    y = rng.exponential(1.0, n) / z
    out = np.full(n, math.inf)
    hit = y > g
    if v_inverse is not None:
        out[hit] = v_inverse(y[hit])
    else:
        idx = np.nonzero(hit)[0]
        for i in idx:
            out[i] = flow_ev.flow_integral_above(y[i], math.inf)
    return out


def sample_explosion_times(flow_ev, z, n, rng, kappa_inverse=None):
    """n explosion times (inf when never exploding): kappa^{-1}(E/z) if E/z < gamma."""
    rep = flow_ev.report
    if rep.conservative:
        raise UnsupportedMechanismError("explosion times need a non-conservative mechanism")
    g = rep.gamma
    y = rng.exponential(1.0, n) / z
    out = np.full(n, math.inf)
    hit = y < g
    if kappa_inverse is not None:
        out[hit] = kappa_inverse(y[hit])
    else:
        idx = np.nonzero(hit)[0]
        for i in idx:
            out[i] = -flow_ev.flow_integral_below(0.0, y[i])
    return out
