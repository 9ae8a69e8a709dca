"""The mechanism catalog and its closed-form oracles.

Mechanisms are defined in ``data/catalog.yaml`` (the stable on-disk format);
this module parses that file and attaches hand-derived closed forms (flow,
extinction/explosion boundaries) to the entries that admit them.  The closed
forms are *oracles*: the numerical flow solver never consults them, and the
test suite checks the solver against them.

Derivations frozen here:

* feller (psi = b l^2):  u(t,l) = l / (1 + b l t), v(t) = 1/(b t).
* stable (psi = l^a):    u(t,l) = (l^(1-a) + (a-1) t)^(-1/(a-1)),
                         v(t) = ((a-1) t)^(-1/(a-1)).
* neveu (psi = l log l): u(t,l) = l^(exp(-t)).  The catalog realises the
  mechanism as the density r^-2 on (0,inf) plus a linear term: integrating
  (e^{-lr} - 1 + lr 1_{r<1}) r^-2 dr gives l log l + (euler_gamma - 1) l,
  so alpha = 1 - euler_gamma cancels the compensation constant.  The tests
  re-derive this constant by quadrature.
* quadratic-super (psi = l^2 - l): partial fractions in the flow integral
  give u(t,l) = l / (l + (1-l) e^{-t}), v(t) = 1/(1 - e^{-t}).
* sqrt-nonconservative (psi = -sqrt(l)): u(t,l) = (sqrt(l) + t/2)^2,
  kappa(t) = t^2/4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np
import yaml

from .errors import MechanismError
from .mechanisms import (
    Atom,
    BranchingMechanism,
    ExponentialDensity,
    LogPowerDensity,
    PowerDensity,
)

_KINDS = {
    "atom": lambda d: Atom(location=float(d["location"]), mass=float(d["mass"])),
    "power": lambda d: PowerDensity(
        c=float(d["c"]),
        exponent=float(d["exponent"]),
        lo=float(d.get("lo", 0.0)),
        hi=float(d.get("hi", math.inf)),
        rate=float(d.get("rate", 0.0)),
    ),
    "logpower": lambda d: LogPowerDensity(
        c=float(d["c"]),
        exponent=float(d["exponent"]),
        logpow=float(d["logpow"]),
        r0=float(d["r0"]),
    ),
    "exponential": lambda d: ExponentialDensity(c=float(d["c"]), mu=float(d["mu"])),
}


def component_from_dict(d: dict):
    kind = d.get("kind")
    if kind not in _KINDS:
        raise MechanismError(f"unknown component kind {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        comp = _KINDS[kind](d)
    except (KeyError, TypeError, ValueError) as exc:
        raise MechanismError(f"bad {kind} component {d!r}: {exc}") from exc
    comp.validate()
    return comp


def mechanism_from_dict(d: dict, name: Optional[str] = None) -> BranchingMechanism:
    try:
        alpha = float(d["alpha"])
        beta = float(d["beta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MechanismError(f"mechanism needs numeric alpha and beta: {exc}") from exc
    comps = tuple(component_from_dict(c) for c in d.get("components", []))
    return BranchingMechanism(alpha=alpha, beta=beta, levy=comps, name=name or d.get("name"))


def mechanism_to_dict(mech: BranchingMechanism) -> dict:
    comps = []
    for c in mech.levy:
        if isinstance(c, Atom):
            comps.append({"kind": "atom", "location": c.location, "mass": c.mass})
        elif isinstance(c, PowerDensity):
            comps.append({"kind": "power", "c": c.c, "exponent": c.exponent,
                          "lo": c.lo, "hi": c.hi, "rate": c.rate})
        elif isinstance(c, LogPowerDensity):
            comps.append({"kind": "logpower", "c": c.c, "exponent": c.exponent,
                          "logpow": c.logpow, "r0": c.r0})
        elif isinstance(c, ExponentialDensity):
            comps.append({"kind": "exponential", "c": c.c, "mu": c.mu})
    return {"alpha": mech.alpha, "beta": mech.beta, "components": comps}


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    mechanism: BranchingMechanism
    notes: str = ""
    exact_u: Optional[Callable[[float, float], float]] = None      # u(t, lam), any real t in domain
    exact_v: Optional[Callable[[float], float]] = None             # v(t)
    exact_kappa: Optional[Callable[[float], float]] = None         # kappa(t)
    exact_psi: Optional[Callable[[float], float]] = None
    exact_v_inv: Optional[Callable] = None                         # v^{-1}(y), vectorized
    exact_kappa_inv: Optional[Callable] = None                     # kappa^{-1}(y), vectorized


def _feller_u(t, lam, beta=1.0):
    return lam / (1.0 + beta * lam * t)


def _stable_u(t, lam, a=1.5):
    base = lam ** (1.0 - a) + (a - 1.0) * t
    if base <= 0.0:
        raise ValueError("outside backward domain")
    return base ** (-1.0 / (a - 1.0))


def _neveu_u(t, lam):
    return lam ** math.exp(-t)


def _quadsuper_u(t, lam):
    den = lam + (1.0 - lam) * math.exp(-t)
    if den <= 0.0:
        raise ValueError("outside backward domain")
    return lam / den


def _sqrt_u(t, lam):
    s = math.sqrt(lam) + 0.5 * t
    if s <= 0.0:
        raise ValueError("outside backward domain")
    return s * s


_EXACT = {
    "feller": dict(
        exact_u=_feller_u,
        exact_v=lambda t: 1.0 / t,
        exact_kappa=lambda t: 0.0,
        exact_psi=lambda lam: lam * lam,
        exact_v_inv=lambda y: 1.0 / y,
    ),
    "stable": dict(
        exact_u=_stable_u,
        exact_v=lambda t, a=1.5: ((a - 1.0) * t) ** (-1.0 / (a - 1.0)),
        exact_kappa=lambda t: 0.0,
        exact_psi=lambda lam: lam ** 1.5,
        exact_v_inv=lambda y, a=1.5: y ** (1.0 - a) / (a - 1.0),
    ),
    "neveu": dict(
        exact_u=_neveu_u,
        exact_v=lambda t: math.inf,
        exact_kappa=lambda t: 0.0,
        exact_psi=lambda lam: lam * math.log(lam) if lam > 0 else 0.0,
    ),
    "quadratic-super": dict(
        exact_u=_quadsuper_u,
        exact_v=lambda t: 1.0 / -math.expm1(-t),
        exact_kappa=lambda t: 0.0,
        exact_psi=lambda lam: lam * lam - lam,
        exact_v_inv=lambda y: -np.log1p(-1.0 / y),
    ),
    "cp-subcritical": dict(
        exact_psi=lambda lam: 2.0 * lam - -math.expm1(-lam),
    ),
    "sqrt-nonconservative": dict(
        exact_u=_sqrt_u,
        exact_v=lambda t: math.inf,
        exact_kappa=lambda t: 0.25 * t * t,
        exact_psi=lambda lam: -math.sqrt(lam),
        exact_kappa_inv=lambda y: 2.0 * np.sqrt(y),
    ),
}


def _load_raw() -> dict:
    with resources.files("csbplab.data").joinpath("catalog.yaml").open("r") as fh:
        return yaml.safe_load(fh)


_CACHE: dict = {}


def load_catalog() -> dict[str, CatalogEntry]:
    if not _CACHE:
        raw = _load_raw()
        for name, spec in raw.items():
            mech = mechanism_from_dict(spec, name=name)
            extras = _EXACT.get(name, {})
            _CACHE[name] = CatalogEntry(
                name=name, mechanism=mech, notes=spec.get("notes", ""), **extras
            )
    return dict(_CACHE)


def catalog_names() -> list[str]:
    return list(load_catalog().keys())


def get_entry(name: str) -> CatalogEntry:
    cat = load_catalog()
    if name not in cat:
        raise MechanismError(f"unknown catalog mechanism {name!r}; available: {', '.join(cat)}")
    return cat[name]


def get_mechanism(name: str) -> BranchingMechanism:
    return get_entry(name).mechanism
