"""Numba backend: scalar per-path Lamperti-Euler loops."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .common import ABSORB_EXPLODED, ABSORB_EXTINCT, ABSORB_NONE, LAM_CAP


@njit(cache=True)
def _sample_jump(gen, kinds, params, cumw):
    u = gen.random()
    idx = 0
    while cumw[idx] < u and idx < kinds.shape[0] - 1:
        idx += 1
    k = kinds[idx]
    if k == 0:
        return params[idx, 0]
    if k == 1:
        return (params[idx, 0] + gen.random() * params[idx, 1]) ** params[idx, 2]
    if k == 2:
        return math.exp(params[idx, 0] + gen.random() * params[idx, 1])
    if k == 3:
        return params[idx, 0] + gen.exponential(params[idx, 1])
    # log-power: rejection against the pure-power envelope
    while True:
        r = (params[idx, 0] + gen.random() * params[idx, 1]) ** params[idx, 2]
        accept = (params[idx, 4] / (-math.log(r))) ** params[idx, 3]
        if gen.random() <= accept:
            return r


@njit(cache=True)
def lamperti_ensemble(gen, z0, n_steps, h, snap_steps, drift0, gvar_core,
                      gvar_sub, ar_floor, jrate, kinds, params, cumw,
                      absorb_at_zero, floor, cap, explode_on_cap):
    """Euler splitting of the Lamperti time change for an ensemble of paths.

    Over one grid step the Levy increment is applied at Levy time s = z * h:
    deterministic drift -drift0*s, a Gaussian of variance gvar_core*s (true
    diffusion) plus gvar_sub*s (small-jump substitute, only while z >=
    ar_floor: below that the substitute's per-step noise rivals z itself and
    would stall the decay), and Poisson jumps >= delta at rate jrate*s.
    Returns (values[n_paths, n_snaps], absorb_kind[n_paths], absorb_time[n_paths]).
    """
    n_paths = z0.shape[0]
    n_snaps = snap_steps.shape[0]
    out = np.empty((n_paths, n_snaps))
    a_kind = np.zeros(n_paths, dtype=np.int8)
    a_time = np.full(n_paths, np.inf)

    for i in range(n_paths):
        z = z0[i]
        snap = 0
        while snap < n_snaps and snap_steps[snap] == 0:
            out[i, snap] = z
            snap += 1
        frozen = False
        for step in range(1, n_steps + 1):
            if not frozen:
                s = z * h
                lam_pois = jrate * s
                if z >= cap or lam_pois > LAM_CAP:
                    z = max(z, cap)
                    if explode_on_cap:
                        a_kind[i] = ABSORB_EXPLODED
                        a_time[i] = (step - 1) * h
                        frozen = True
                else:
                    dz = -drift0 * s
                    gvar = gvar_core + (gvar_sub if z >= ar_floor else 0.0)
                    if gvar > 0.0:
                        dz += math.sqrt(gvar * s) * gen.standard_normal()
                    if lam_pois > 0.0:
                        n_jumps = gen.poisson(lam_pois)
                        for _ in range(n_jumps):
                            dz += _sample_jump(gen, kinds, params, cumw)
                    z += dz
                    if z <= 0.0:
                        if absorb_at_zero:
                            z = 0.0
                            a_kind[i] = ABSORB_EXTINCT
                            a_time[i] = step * h
                            frozen = True
                        else:
                            z = floor
            while snap < n_snaps and snap_steps[snap] == step:
                out[i, snap] = z
                snap += 1
    return out, a_kind, a_time
