"""Shared jump-table encoding for the Lamperti kernels.

A mechanism's jump measure restricted to sizes >= delta is encoded as flat
arrays so both backends (and numba in particular) can sample from it:

    kinds : int64[n]    0 atom | 1 power (p != 1) | 2 power (p == 1)
                        3 exponential tail | 4 log-power (rejection)
    params: float64[n,5]
        atom:     [location, 0, 0, 0, 0]
        power:    [A, B, C, 0, 0] with r = (A + U B)^C,
                  A = lo^(1-p), B = hi^(1-p) - A, C = 1/(1-p)
        power p=1:[log lo, log(hi/lo), 0, 0, 0] with r = exp(p0 + U p1)
        exp tail: [lo, scale, 0, 0, 0] with r = lo + Exp(scale)
        logpower: [A, B, C, q, log(1/r0)]; propose from the power envelope,
                  accept with probability (log(1/r0)/log(1/r))^q
    cumw  : float64[n]  cumulative mixture weights (last entry 1.0)

Poisson intensities above ``LAM_CAP`` mark the path as having crossed the
explosion cap: drawing that many individual jumps is pointless, and a path
with that jump intensity is astronomically large already.
"""

from __future__ import annotations

LAM_CAP = 5.0e4

ABSORB_NONE = 0
ABSORB_EXTINCT = 1
ABSORB_EXPLODED = 2
