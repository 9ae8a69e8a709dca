"""Pure-numpy backend: step-major vectorized Lamperti-Euler."""

from __future__ import annotations

import numpy as np

from .common import ABSORB_EXPLODED, ABSORB_EXTINCT, LAM_CAP


def _sample_jumps(gen, n, kinds, params, cumw):
    """n jump sizes from the truncated mixture, vectorized."""
    out = np.empty(n)
    u = gen.random(n)
    idx = np.searchsorted(cumw, u, side="left")
    idx = np.minimum(idx, len(kinds) - 1)
    for row in range(len(kinds)):
        mask = idx == row
        m = int(mask.sum())
        if m == 0:
            continue
        k = kinds[row]
        p = params[row]
        if k == 0:
            out[mask] = p[0]
        elif k == 1:
            out[mask] = (p[0] + gen.random(m) * p[1]) ** p[2]
        elif k == 2:
            out[mask] = np.exp(p[0] + gen.random(m) * p[1])
        elif k == 3:
            out[mask] = p[0] + gen.exponential(p[1], m)
        else:  # log-power rejection, refill until all accepted
            vals = np.empty(m)
            pending = np.arange(m)
            while pending.size:
                r = (p[0] + gen.random(pending.size) * p[1]) ** p[2]
                accept = gen.random(pending.size) <= (p[4] / (-np.log(r))) ** p[3]
                vals[pending[accept]] = r[accept]
                pending = pending[~accept]
            out[mask] = vals
    return out


def lamperti_ensemble(gen, z0, n_steps, h, snap_steps, drift0, gvar_core,
                      gvar_sub, ar_floor, jrate, kinds, params, cumw,
                      absorb_at_zero, floor, cap, explode_on_cap):
    """Vectorized counterpart of the numba kernel (same contract)."""
    n_paths = z0.shape[0]
    n_snaps = snap_steps.shape[0]
    out = np.empty((n_paths, n_snaps))
    a_kind = np.zeros(n_paths, dtype=np.int8)
    a_time = np.full(n_paths, np.inf)

    z = z0.astype(float).copy()
    live = np.ones(n_paths, dtype=bool)
    snap = 0
    while snap < n_snaps and snap_steps[snap] == 0:
        out[:, snap] = z
        snap += 1

    for step in range(1, n_steps + 1):
        if live.any():
            s = np.where(live, z * h, 0.0)
            lam_pois = jrate * s
            hot = live & ((z >= cap) | (lam_pois > LAM_CAP))
            if hot.any():
                z[hot] = np.maximum(z[hot], cap)
                if explode_on_cap:
                    a_kind[hot] = ABSORB_EXPLODED
                    a_time[hot] = (step - 1) * h
                    live &= ~hot
            act = live & ~hot
            if act.any():
                sa = s[act]
                dz = -drift0 * sa
                gv = gvar_core + gvar_sub * (z[act] >= ar_floor)
                if gvar_core > 0.0 or gvar_sub > 0.0:
                    dz = dz + np.sqrt(gv * sa) * gen.standard_normal(int(act.sum()))
                if jrate > 0.0:
                    counts = gen.poisson(jrate * sa)
                    total = int(counts.sum())
                    if total:
                        sizes = _sample_jumps(gen, total, kinds, params, cumw)
                        owners = np.repeat(np.arange(counts.size), counts)
                        dz = dz + np.bincount(owners, weights=sizes,
                                              minlength=counts.size)
                z[act] += dz
                neg = act.copy()
                neg[act] = z[act] <= 0.0
                if neg.any():
                    if absorb_at_zero:
                        z[neg] = 0.0
                        a_kind[neg] = ABSORB_EXTINCT
                        a_time[neg] = step * h
                        live &= ~neg
                    else:
                        z[neg] = floor
        while snap < n_snaps and snap_steps[snap] == step:
            out[:, snap] = z
            snap += 1
    return out, a_kind, a_time
