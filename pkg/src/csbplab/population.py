"""The measure-valued population process and its frequency limits.

Three interchangeable constructions of the population measure on [0, x]:

* ``simulate_blocks``: the universal reference.  [0, x] is split into n equal
  blocks, each carrying an independent path started at x/n, which realises
  the defining partition property of the frequency process exactly at
  resolution n.  Atom locations are block midpoints.
* ``simulate_fv_poisson``: the finite-variation Poisson decomposition -- a
  decaying dust density e^{-Dt} plus atoms born at rate e^{-Dt} pi(dr) with
  masses >= eps, each running an independent path from its birth time.
* ``simulate_iv_cluster``: the infinite-variation cluster decomposition with
  the closed-form entrance law; implemented for the quadratic diffusion
  mechanism, whose entrance tail is exponential.

Mechanisms whose paths overflow float range before frequencies settle (the
`l log l` family explodes doubly exponentially) are simulated in log scale;
states then carry a ``log_scale`` offset so that stored masses stay O(1).
Frequencies are exact under the offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import AbsorbedStateError, ContractError, UnsupportedMechanismError
from .mechanisms import BranchingMechanism, ClassificationReport, Variation, classify
from .paths import (
    PathConfig,
    build_jump_tables,
    compound_poisson_params,
    cp_exact_values,
    lamperti_ensemble,
    loglog_params,
    loglog_step_log,
    pdmp_values,
    quadratic_params,
    quadratic_step,
    truncated_fv_params,
)

LOG_TINY = -745.0


@dataclass
class PopulationState:
    """A finite measure on [0, x]: dust density plus atoms.

    True masses are ``exp(log_scale)`` times the stored ones; log_scale is 0
    except for log-scale simulations whose totals exceed float range.
    """

    t: float
    x: float
    dust_coefficient: float
    locations: np.ndarray
    masses: np.ndarray
    log_scale: float = 0.0

    @property
    def total(self) -> float:
        return self.dust_coefficient * self.x + float(self.masses.sum())

    def frequencies(self) -> "FrequencyMeasure":
        return frequency_at(self)


@dataclass
class FrequencyMeasure:
    x: float
    dust_fraction: float
    locations: np.ndarray
    freqs: np.ndarray

    def check(self, tol=1e-12):
        s = self.dust_fraction + float(self.freqs.sum())
        if abs(s - 1.0) > tol:
            raise ContractError(f"frequencies sum to {s}, not 1")
        return self


@dataclass
class SettlerReport:
    dust: float                        # limiting dust fraction
    settlers: list                     # [(location, frequency)] above the floor
    residual: float                    # aggregated frequency below the floor
    eve: Optional[float]               # location, present iff an Eve was detected
    eve_finite_time: bool
    meta: dict = field(default_factory=dict)

    @property
    def n_settlers(self):
        return len(self.settlers)


def frequency_at(state: PopulationState) -> FrequencyMeasure:
    """Normalize a population state; errors at the absorbing totals 0 and inf."""
    tot = state.total
    if tot == 0.0 or math.isinf(tot) or np.isnan(tot):
        raise AbsorbedStateError(f"population total is {tot} at t={state.t}")
    return FrequencyMeasure(
        x=state.x,
        dust_fraction=state.dust_coefficient * state.x / tot,
        locations=state.locations,
        freqs=state.masses / tot,
    ).check(tol=1e-9)


def tv_distance(f1: FrequencyMeasure, f2: FrequencyMeasure) -> float:
    """Total-variation distance sup_A |f1(A) - f2(A)| on a shared atom support."""
    d = 0.5 * abs(f1.dust_fraction - f2.dust_fraction)
    a1 = dict(zip(f1.locations.tolist(), f1.freqs.tolist()))
    a2 = dict(zip(f2.locations.tolist(), f2.freqs.tolist()))
    for loc in set(a1) | set(a2):
        d += 0.5 * abs(a1.get(loc, 0.0) - a2.get(loc, 0.0))
    return d


# ---------------------------------------------------------------------------
# block-partition simulator
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    x: float
    snap_times: np.ndarray
    states: list                       # list[PopulationState]
    absorption: Optional[str] = None   # "extinct" | "exploded"
    absorption_time: Optional[float] = None
    eve_location: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def terminal(self) -> PopulationState:
        return self.states[-1]


def _block_engine(mech, report):
    if quadratic_params(mech) is not None:
        return "quadratic"
    if loglog_params(mech) is not None:
        return "loglog"
    if compound_poisson_params(mech) is not None:
        return "cp"
    return "lamperti"


def simulate_blocks(mech: BranchingMechanism, x: float, n: int, cfg: PathConfig,
                    rng, snap_times=None, report: Optional[ClassificationReport] = None,
                    engine: str = "auto") -> Trajectory:
    """Block-partition population: n independent paths from x/n each."""
    if n < 1:
        raise ContractError("need at least one block")
    rep = report if report is not None else classify(mech)
    if snap_times is None:
        snap_times = [cfg.horizon]
    snap_times = np.asarray(snap_times, dtype=float)
    locs = (np.arange(n) + 0.5) * (x / n)
    z0 = x / n
    if engine == "auto":
        engine = _block_engine(mech, rep)

    states = []
    absorption = absorption_time = eve_loc = None

    if engine == "quadratic":
        a, b = quadratic_params(mech)
        masses = np.full(n, z0)
        t_prev = 0.0
        for t in snap_times:
            if t > t_prev:
                masses = quadratic_step(masses, t - t_prev, a, b, rng)
                masses = np.minimum(masses, cfg.cap)
            t_prev = t
            states.append(PopulationState(t=t, x=x, dust_coefficient=0.0,
                                          locations=locs, masses=masses.copy()))
        if not rep.persistent and np.all(masses == 0.0):
            # report absorption; the extremal block is the last one alive
            absorption = "extinct"
            absorption_time, eve_loc = _extinction_from_states(states, locs, snap_times)

    elif engine == "loglog":
        k, a0 = loglog_params(mech)
        logm = np.full(n, math.log(z0))
        t_prev = 0.0
        for t in snap_times:
            if t > t_prev:
                logm = loglog_step_log(logm, t - t_prev, k, a0, rng)
            t_prev = t
            states.append(_state_from_logs(t, x, locs, logm))

    elif engine == "cp":
        vals = np.empty((n, snap_times.size))
        for i in range(n):
            vals[i] = cp_exact_values(mech, z0, snap_times, rng, cap=cfg.cap)
        for j, t in enumerate(snap_times):
            states.append(PopulationState(t=t, x=x, dust_coefficient=0.0,
                                          locations=locs, masses=vals[:, j].copy()))

    else:  # lamperti
        vals, a_kind, a_time = lamperti_ensemble(mech, z0, cfg, snap_times, n, rng, report=rep)
        for j, t in enumerate(snap_times):
            states.append(PopulationState(t=t, x=x, dust_coefficient=0.0,
                                          locations=locs, masses=vals[:, j].copy()))
        if np.all(a_kind == 1):
            absorption = "extinct"
            absorption_time = float(a_time.max())
            eve_loc = float(locs[int(np.argmax(a_time))])
        elif np.any(a_kind == 2):
            absorption = "exploded"
            absorption_time = float(a_time[a_kind == 2].min())
            eve_loc = float(locs[int(np.argmin(np.where(a_kind == 2, a_time, np.inf)))])

    return Trajectory(x=x, snap_times=snap_times, states=states,
                      absorption=absorption, absorption_time=absorption_time,
                      eve_location=eve_loc,
                      meta={"engine": engine, "n_blocks": n, "mechanism": mech.name})


def _state_from_logs(t, x, locs, logm):
    scale = float(np.max(logm))
    rel = np.exp(np.maximum(logm - scale, LOG_TINY))
    return PopulationState(t=t, x=x, dust_coefficient=0.0, locations=locs,
                           masses=rel, log_scale=scale)


def _extinction_from_states(states, locs, snap_times):
    last_alive = None
    for st in states:
        alive = st.masses > 0.0
        if alive.any():
            last_alive = (st.t, locs[alive][np.argmax(st.masses[alive])])
    if last_alive is None:
        return float(snap_times[0]), float(locs[0])
    return float(last_alive[0]), float(last_alive[1])


# ---------------------------------------------------------------------------
# finite-variation Poisson decomposition
# ---------------------------------------------------------------------------


def fv_birth_intensity(mech, x, horizon, eps, report=None):
    """Expected atom count x pi([eps,inf)) integral_0^T e^{-Dt} dt."""
    rep = report if report is not None else classify(mech)
    if rep.variation is not Variation.FINITE:
        raise UnsupportedMechanismError("Poisson-atom decomposition needs finite variation")
    D = rep.D
    tail = mech.levy_mass(eps, math.inf)
    time_mass = horizon if D == 0.0 else -math.expm1(-D * horizon) / D
    return x * tail * time_mass, tail, time_mass


def simulate_fv_poisson(mech: BranchingMechanism, x: float, horizon: float,
                        eps: float, cfg: PathConfig, rng, snap_times=None,
                        report: Optional[ClassificationReport] = None,
                        atom_engine: str = "auto") -> Trajectory:
    """Finite-variation population: decaying dust plus Poisson atoms.

    Atom birth times have density proportional to e^{-Dt} on [0, horizon],
    locations are uniform, initial masses follow pi restricted to [eps, inf).
    The eps-truncation bias on Laplace functionals is bounded by
    lam * x * t * integral_{(0,eps)} r pi(dr) for sub-critical mechanisms
    (see ``fv_truncation_bias``).

    atom_engine: 'pdmp' evolves atoms by the exact jump process of the
    delta-truncated mechanism (gridless, preferred for frequency structure:
    the sub-delta loss is a mechanism-wide scale bias), 'lamperti' by the
    Euler scheme (preferred when unbiased total-mass laws matter), 'auto'
    picks the exact process when the jump measure is finite and pdmp
    otherwise.
    """
    if eps <= 0:
        raise ContractError("mass cutoff eps must be positive")
    rep = report if report is not None else classify(mech)
    mean_n, tail, _ = fv_birth_intensity(mech, x, horizon, eps, rep)
    D = rep.D
    if snap_times is None:
        snap_times = [horizon]
    snap_times = np.asarray(snap_times, dtype=float)

    n_atoms = int(rng.poisson(mean_n))
    locs = np.sort(rng.uniform(0.0, x, n_atoms))
    if D == 0.0:
        births = rng.uniform(0.0, horizon, n_atoms)
    else:
        u = rng.uniform(0.0, 1.0, n_atoms)
        births = -np.log1p(u * math.expm1(-D * horizon)) / D
    tables = build_jump_tables(mech, eps)
    masses0 = tables.sample(rng, n_atoms) if n_atoms else np.empty(0)

    cp_par = compound_poisson_params(mech)
    if atom_engine == "auto":
        atom_engine = "cp" if cp_par is not None else "pdmp"
    if atom_engine == "pdmp" and cp_par is not None:
        atom_engine = "cp"
    if atom_engine == "pdmp":
        trunc = truncated_fv_params(mech, rep, cfg.delta)
    vals = np.zeros((n_atoms, snap_times.size))
    for i in range(n_atoms):
        later = snap_times >= births[i]
        if not later.any():
            continue
        rel_times = snap_times[later] - births[i]
        if atom_engine == "cp":
            vals[i, later] = cp_exact_values(mech, masses0[i], rel_times, rng, cap=cfg.cap)
        elif atom_engine == "pdmp":
            D_t, m_t, samp = trunc
            vals[i, later] = pdmp_values(D_t, m_t, samp, masses0[i], rel_times,
                                         rng, cap=cfg.cap)
        else:
            sub_cfg = replace(cfg, horizon=max(float(rel_times.max()), cfg.h))
            grid = np.round(rel_times / cfg.h) * cfg.h
            v, _, _ = lamperti_ensemble(mech, masses0[i], sub_cfg, grid, 1, rng, report=rep)
            vals[i, later] = v[0]

    states = []
    for j, t in enumerate(snap_times):
        born = births <= t
        states.append(PopulationState(
            t=float(t), x=x, dust_coefficient=math.exp(-D * t),
            locations=locs[born], masses=vals[born, j]))
    return Trajectory(x=x, snap_times=snap_times, states=states,
                      meta={"engine": f"fv-poisson/{atom_engine}", "eps": eps,
                            "n_atoms": n_atoms, "mean_atoms": mean_n,
                            "mechanism": mech.name})


def fv_truncation_bias(mech, x, t, eps, lam):
    """Laplace-functional bias budget of dropping atoms below eps."""
    return lam * x * t * mech.levy_mean(0.0, eps)


# ---------------------------------------------------------------------------
# infinite-variation cluster decomposition (diffusion mechanism)
# ---------------------------------------------------------------------------


def simulate_iv_cluster(mech: BranchingMechanism, x: float, s0: float, eps: float,
                        cfg: PathConfig, rng, snap_times=None,
                        report: Optional[ClassificationReport] = None) -> Trajectory:
    """Cluster decomposition started from the closed-form entrance law.

    Implemented for the pure diffusion mechanism psi = beta l^2, whose
    entrance law at warm-up time s0 has the exponential tail
    nu_{s0}((r, inf)) = e^{-r/(beta s0)}/(beta s0): cluster count is
    Poisson(x nu_{s0}((eps, inf))) and each surviving cluster mass is
    eps + Exp(beta s0).  Clusters then evolve by exact transitions.
    """
    if not (mech.beta > 0 and mech.alpha == 0.0 and not mech.levy):
        raise UnsupportedMechanismError(
            "cluster-entrance simulation is implemented for the diffusion "
            "mechanism only; general entrance sampling is out of scope")
    if s0 <= 0 or eps <= 0:
        raise ContractError("warm-up s0 and cutoff eps must be positive")
    beta = mech.beta
    if snap_times is None:
        snap_times = [cfg.horizon]
    snap_times = np.asarray(snap_times, dtype=float)
    if np.any(snap_times < s0):
        raise ContractError("cluster snapshots start at the warm-up time s0")

    bs = beta * s0
    mean_n = x * math.exp(-eps / bs) / bs
    n = int(rng.poisson(mean_n))
    locs = np.sort(rng.uniform(0.0, x, n))
    masses = eps + rng.exponential(bs, n)

    states = []
    t_prev = s0
    for t in snap_times:
        if t > t_prev:
            masses = quadratic_step(masses, t - t_prev, 0.0, beta, rng)
        t_prev = t
        states.append(PopulationState(t=float(t), x=x, dust_coefficient=0.0,
                                      locations=locs, masses=masses.copy()))
    return Trajectory(x=x, snap_times=snap_times, states=states,
                      meta={"engine": "iv-cluster", "eps": eps, "s0": s0,
                            "mean_clusters": mean_n, "mechanism": mech.name})


# ---------------------------------------------------------------------------
# limit detection
# ---------------------------------------------------------------------------


def detect_limit(traj: Trajectory, floor: float = 1e-6, eta: float = 1e-2) -> SettlerReport:
    """Summarize the terminal frequency structure of a trajectory.

    At absorption the unique extremal atom is the Eve (in finite time).
    Otherwise atoms with terminal frequency below ``floor`` aggregate into a
    residual bucket and an Eve is declared when the top frequency reaches
    1 - eta.
    """
    if traj.absorption is not None:
        return SettlerReport(dust=0.0, settlers=[(traj.eve_location, 1.0)],
                             residual=0.0, eve=traj.eve_location,
                             eve_finite_time=True,
                             meta={"absorption": traj.absorption,
                                   "absorption_time": traj.absorption_time})
    state = traj.terminal()
    freq = frequency_at(state)
    big = freq.freqs >= floor
    settlers = sorted(zip(freq.locations[big].tolist(), freq.freqs[big].tolist()),
                      key=lambda p: -p[1])
    residual = float(freq.freqs[~big].sum())
    eve = None
    if settlers and settlers[0][1] >= 1.0 - eta:
        eve = settlers[0][0]
    return SettlerReport(dust=freq.dust_fraction, settlers=settlers,
                         residual=residual, eve=eve, eve_finite_time=False,
                         meta={"floor": floor, "eta": eta, "t": state.t})


# ---------------------------------------------------------------------------
# trajectory dump format
# ---------------------------------------------------------------------------

DUMP_HEADER = "run\tt\tdust_coefficient\ttotal\tlog_scale\tatoms"


def dump_rows(run_id: int, traj: Trajectory):
    """Serialize a trajectory as tab-separated rows (see DUMP_HEADER)."""
    rows = []
    for st in traj.states:
        atoms = ";".join(f"{loc:.9g}:{m:.12g}"
                         for loc, m in zip(st.locations, st.masses))
        rows.append(f"{run_id}\t{st.t:.9g}\t{st.dust_coefficient:.12g}\t"
                    f"{st.total:.12g}\t{st.log_scale:.9g}\t{atoms}")
    return rows


def parse_rows(lines):
    """Inverse of dump_rows (header excluded): yields PopulationState rows."""
    for line in lines:
        run, t, dust, total, log_scale, atoms = line.rstrip("\n").split("\t")
        locs, masses = [], []
        if atoms:
            for pair in atoms.split(";"):
                l, m = pair.split(":")
                locs.append(float(l))
                masses.append(float(m))
        yield int(run), PopulationState(
            t=float(t), x=math.nan, dust_coefficient=float(dust),
            locations=np.asarray(locs), masses=np.asarray(masses),
            log_scale=float(log_scale))
