"""Population decompositions, frequency normalization and limit detection."""

import math

import numpy as np
import pytest
from scipy import stats

from csbplab.errors import AbsorbedStateError, ContractError, UnsupportedMechanismError
from csbplab.paths import PathConfig
from csbplab.population import (
    PopulationState,
    Trajectory,
    detect_limit,
    dump_rows,
    fv_birth_intensity,
    fv_truncation_bias,
    frequency_at,
    parse_rows,
    simulate_blocks,
    simulate_fv_poisson,
    simulate_iv_cluster,
    tv_distance,
)
from conftest import rng


def state(t=1.0, x=1.0, dust=0.0, locs=(), masses=(), scale=0.0):
    return PopulationState(t=t, x=x, dust_coefficient=dust,
                           locations=np.asarray(locs, dtype=float),
                           masses=np.asarray(masses, dtype=float),
                           log_scale=scale)


# ---------------------------------------------------------------------------
# frequency normalization
# ---------------------------------------------------------------------------


def test_frequency_single_atom():
    f = frequency_at(state(locs=[0.3], masses=[5.0]))
    assert f.freqs[0] == 1.0 and f.dust_fraction == 0.0


def test_frequency_dust_and_atom():
    f = frequency_at(state(dust=0.5, locs=[0.25], masses=[0.5]))
    assert f.dust_fraction == pytest.approx(0.5)
    assert f.freqs[0] == pytest.approx(0.5)


def test_frequency_absorbed_states_error():
    with pytest.raises(AbsorbedStateError):
        frequency_at(state(masses=[]))
    with pytest.raises(AbsorbedStateError):
        frequency_at(state(locs=[0.1], masses=[math.inf]))


def test_frequency_normalization_tight():
    g = rng(0)
    for _ in range(50):
        n = int(g.integers(1, 400))
        f = frequency_at(state(dust=float(g.uniform(0, 2)),
                               locs=np.arange(n) / n,
                               masses=g.exponential(1.0, n)))
        assert abs(f.dust_fraction + f.freqs.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# block simulator
# ---------------------------------------------------------------------------


def test_blocks_single_block_is_unit_frequency(catalog):
    traj = simulate_blocks(catalog["quadratic-super"].mechanism, 1.0, 1,
                           PathConfig(horizon=0.5), rng(1), snap_times=[0.5])
    st = traj.terminal()
    if st.total > 0:
        assert frequency_at(st).freqs[0] == 1.0


def test_blocks_initial_condition_uniform(catalog):
    traj = simulate_blocks(catalog["feller"].mechanism, 1.0, 100,
                           PathConfig(horizon=1.0), rng(2), snap_times=[0.0, 1.0])
    f0 = frequency_at(traj.states[0])
    assert np.allclose(f0.freqs, 0.01)
    assert traj.states[0].locations[0] == pytest.approx(0.005)


def test_blocks_exchangeability(catalog):
    mech = catalog["feller"].mechanism
    first, last = [], []
    g = rng(3)
    for _ in range(4000):
        traj = simulate_blocks(mech, 1.0, 10, PathConfig(horizon=1.0), g,
                               snap_times=[1.0])
        m = traj.terminal().masses
        first.append(m[0])
        last.append(m[-1])
    first, last = np.asarray(first), np.asarray(last)
    se = math.hypot(first.std(), last.std()) / math.sqrt(4000)
    assert abs(first.mean() - last.mean()) <= 3 * se


def test_blocks_engine_selection(catalog, reports):
    cases = {"feller": "quadratic", "quadratic-super": "quadratic",
             "neveu": "loglog", "cp-subcritical": "cp", "power-dust": "lamperti"}
    for name, engine in cases.items():
        traj = simulate_blocks(catalog[name].mechanism, 1.0, 4,
                               PathConfig(horizon=0.5), rng(4), snap_times=[0.5],
                               report=reports[name])
        assert traj.meta["engine"] == engine, name


def test_blocks_loglog_scale_is_exact_softmax(catalog):
    traj = simulate_blocks(catalog["neveu"].mechanism, 1.0, 50,
                           PathConfig(horizon=20.0), rng(5),
                           snap_times=[10.0, 20.0])
    st = traj.terminal()
    assert st.log_scale != 0.0
    assert st.masses.max() == pytest.approx(1.0)
    f = frequency_at(st)
    assert abs(f.freqs.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# finite-variation Poisson decomposition
# ---------------------------------------------------------------------------


def test_fv_birth_intensity_example(catalog, reports):
    # atom at 1 with D = 2, x = 2, T = 5, eps = 0.5:
    # E N = 2 * 1 * (1 - e^{-10})/2
    mean_n, tail, tmass = fv_birth_intensity(catalog["cp-subcritical"].mechanism,
                                             2.0, 5.0, 0.5,
                                             reports["cp-subcritical"])
    assert mean_n == pytest.approx(2.0 * -math.expm1(-10.0) / 2.0, rel=1e-12)
    counts = [simulate_fv_poisson(catalog["cp-subcritical"].mechanism, 2.0, 5.0,
                                  0.5, PathConfig(), rng(6),
                                  report=reports["cp-subcritical"]).meta["n_atoms"]
              for _ in range(4000)]
    se = math.sqrt(mean_n / 4000)
    assert abs(np.mean(counts) - mean_n) <= 3.5 * se


def test_fv_eps_above_all_atoms_gives_pure_dust(catalog, reports):
    traj = simulate_fv_poisson(catalog["cp-subcritical"].mechanism, 1.0, 3.0,
                               2.0, PathConfig(), rng(7),
                               report=reports["cp-subcritical"])
    st = traj.terminal()
    assert st.masses.size == 0
    assert st.dust_coefficient == pytest.approx(math.exp(-2.0 * 3.0))


def test_fv_rejects_infinite_variation(catalog):
    with pytest.raises(UnsupportedMechanismError):
        simulate_fv_poisson(catalog["feller"].mechanism, 1.0, 1.0, 0.1,
                            PathConfig(), rng(8))


def test_fv_marginal_matches_flow_with_bias_budget(catalog, flows, reports):
    """Laplace functional of the decomposition total vs e^{-x u(t, lam)}."""
    mech = catalog["cp-subcritical"].mechanism
    x, t, eps = 1.0, 1.0, 0.5
    g = rng(9)
    totals = []
    for _ in range(20_000)          :
        traj = simulate_fv_poisson(mech, x, t, eps, PathConfig(), g,
                                   snap_times=[t], report=reports["cp-subcritical"])
        totals.append(traj.terminal().total)
    totals = np.asarray(totals)
    for lam in (0.5, 1.0):
        w = np.exp(-lam * totals)
        got, se = float(w.mean()), float(w.std() / math.sqrt(len(w)))
        want = math.exp(-x * flows["cp-subcritical"].u(t, lam))
        bias = fv_truncation_bias(mech, x, t, eps, lam)
        assert bias == 0.0  # atom at 1: nothing below eps = 0.5
        assert abs(got - want) <= 3.5 * se + bias, lam


def test_fv_marginal_with_real_truncation_bias(catalog, flows, reports):
    mech = catalog["power-dust"].mechanism
    x, t, eps, lam = 1.0, 1.0, 1e-4, 1.0
    g = rng(10)
    totals = []
    for _ in range(4000):
        traj = simulate_fv_poisson(mech, x, t, eps, PathConfig(), g,
                                   snap_times=[t], report=reports["power-dust"],
                                   atom_engine="lamperti")
        totals.append(traj.terminal().total)
    w = np.exp(-lam * np.asarray(totals))
    got, se = float(w.mean()), float(w.std() / math.sqrt(len(w)))
    want = math.exp(-x * flows["power-dust"].u(t, lam))
    bias = fv_truncation_bias(mech, x, t, eps, lam)
    assert bias < 0.03
    assert abs(got - want) <= 3.5 * se + bias


def test_fv_blocks_decomposition_equivalence(catalog, reports):
    """KS agreement of (Z_t([0,x/2]), Z_t([0,x])) between constructions."""
    mech = catalog["cp-subcritical"].mechanism
    rep = reports["cp-subcritical"]
    g = rng(11)
    n = 6000
    half_b, tot_b, half_p, tot_p = [], [], [], []
    for _ in range(n):
        tb = simulate_blocks(mech, 1.0, 2, PathConfig(horizon=1.0), g,
                             snap_times=[1.0], report=rep)
        m = tb.terminal().masses
        half_b.append(m[0])
        tot_b.append(m.sum())
        tp = simulate_fv_poisson(mech, 1.0, 1.0, 0.5, PathConfig(), g,
                                 snap_times=[1.0], report=rep)
        st = tp.terminal()
        dust_half = st.dust_coefficient * 0.5
        in_half = st.locations <= 0.5
        half_p.append(dust_half + st.masses[in_half].sum())
        tot_p.append(st.total)
    for a, b in ((half_b, half_p), (tot_b, tot_p)):
        ks = stats.ks_2samp(np.asarray(a), np.asarray(b))
        assert ks.pvalue > 0.01


# ---------------------------------------------------------------------------
# infinite-variation cluster decomposition
# ---------------------------------------------------------------------------


def test_iv_cluster_count_example(catalog, reports):
    # beta=1, s0=1, eps=1, x=1: E N = e^{-1}
    g = rng(12)
    counts = [simulate_iv_cluster(catalog["feller"].mechanism, 1.0, 1.0, 1.0,
                                  PathConfig(horizon=2.0), g,
                                  snap_times=[1.0]).terminal().masses.size
              for _ in range(20_000)]
    want = math.exp(-1.0)
    assert np.mean(counts) == pytest.approx(want, abs=3.5 * math.sqrt(want / 20_000))


def test_iv_cluster_total_mass_marginal(catalog, flows, reports):
    """Total-mass transform at t vs the flow, within 3 SE + truncation bias."""
    beta, x, s0, eps, t = 1.0, 1.0, 0.2, 0.01, 1.0
    mech = catalog["feller"].mechanism
    g = rng(13)
    totals = []
    for _ in range(20_000):
        traj = simulate_iv_cluster(mech, x, s0, eps, PathConfig(horizon=t), g,
                                   snap_times=[t])
        totals.append(traj.terminal().total)
    totals = np.asarray(totals)
    bs = beta * s0
    for lam in (0.5, 1.0):
        w = np.exp(-lam * totals)
        got, se = float(w.mean()), float(w.std() / math.sqrt(len(w)))
        want = math.exp(-x * flows["feller"].u(t, lam))
        # dropped clusters have entrance mass below eps: their transform
        # deficit is at most x * integral_0^eps lam r nu_s0(dr)
        bias = lam * x * eps * math.exp(-eps / bs) / bs
        assert abs(got - want) <= 3.5 * se + bias, lam


def test_iv_cluster_disjoint_intervals_independent(catalog):
    g = rng(14)
    a_vals, b_vals = [], []
    for _ in range(8000):
        traj = simulate_iv_cluster(catalog["feller"].mechanism, 1.0, 0.5, 0.05,
                                   PathConfig(horizon=2.0), g, snap_times=[2.0])
        st = traj.terminal()
        left = st.locations <= 0.5
        a_vals.append(st.masses[left].sum())
        b_vals.append(st.masses[~left].sum())
    r = stats.pearsonr(np.asarray(a_vals), np.asarray(b_vals))
    assert abs(r.statistic) < 3.5 / math.sqrt(8000)


def test_iv_cluster_rejects_general_mechanism(catalog):
    with pytest.raises(UnsupportedMechanismError):
        simulate_iv_cluster(catalog["neveu"].mechanism, 1.0, 0.5, 0.1,
                            PathConfig(), rng(15))


# ---------------------------------------------------------------------------
# limit detection
# ---------------------------------------------------------------------------


def test_detect_limit_absorbed_run_has_eve():
    traj = Trajectory(x=1.0, snap_times=np.array([1.0]),
                      states=[state(locs=[0.5], masses=[0.0])],
                      absorption="extinct", absorption_time=0.7,
                      eve_location=0.5)
    rep = detect_limit(traj)
    assert rep.eve_finite_time and rep.eve == 0.5
    assert rep.settlers == [(0.5, 1.0)]


def test_detect_limit_floor_aggregation():
    traj = Trajectory(x=1.0, snap_times=np.array([1.0]),
                      states=[state(locs=[0.1, 0.2, 0.3],
                                    masses=[0.989, 0.01, 1e-8])])
    rep = detect_limit(traj, floor=1e-6, eta=0.02)
    assert rep.n_settlers == 2
    assert rep.residual == pytest.approx(1e-8 / (0.999 + 1e-8), rel=1e-6)
    assert rep.eve == pytest.approx(0.1)  # top frequency above 1 - eta


def test_detect_limit_no_eve_when_spread():
    traj = Trajectory(x=1.0, snap_times=np.array([1.0]),
                      states=[state(locs=[0.1, 0.9], masses=[0.6, 0.4])])
    rep = detect_limit(traj)
    assert rep.eve is None and rep.n_settlers == 2


def test_tv_distance():
    f1 = frequency_at(state(locs=[0.1, 0.2], masses=[0.5, 0.5]))
    f2 = frequency_at(state(locs=[0.1, 0.3], masses=[0.5, 0.5]))
    assert tv_distance(f1, f2) == pytest.approx(0.5)
    assert tv_distance(f1, f1) == 0.0


def test_neveu_tv_decreasing_on_explosion(catalog, reports):
    """Along exploding runs the TV distance to the terminal measure shrinks."""
    g = rng(16)
    mech = catalog["neveu"].mechanism
    mono = total = 0
    for _ in range(200):
        traj = simulate_blocks(mech, 1.0, 200, PathConfig(horizon=20.0), g,
                               snap_times=[10.0, 15.0, 20.0],
                               report=reports["neveu"])
        st = traj.terminal()
        log_total = st.log_scale + math.log(st.total)
        if log_total < math.log(1e6):
            continue
        total += 1
        term = frequency_at(st)
        tvs = [tv_distance(frequency_at(s), term) for s in traj.states[:-1]]
        mono += int(tvs[0] >= tvs[1] - 1e-12)
    assert total > 80
    assert mono / total >= 0.9


# ---------------------------------------------------------------------------
# dump format
# ---------------------------------------------------------------------------


def test_dump_roundtrip():
    traj = Trajectory(x=1.0, snap_times=np.array([0.5, 1.0]),
                      states=[state(t=0.5, dust=0.25, locs=[0.1], masses=[2.0]),
                              state(t=1.0, dust=0.125, locs=[0.1, 0.6],
                                    masses=[1.0, 3.0], scale=1.5)])
    rows = dump_rows(7, traj)
    parsed = list(parse_rows(rows))
    assert [r for r, _ in parsed] == [7, 7]
    st = parsed[1][1]
    assert st.t == 1.0 and st.log_scale == 1.5
    assert np.allclose(st.masses, [1.0, 3.0])
    assert st.dust_coefficient == 0.125
