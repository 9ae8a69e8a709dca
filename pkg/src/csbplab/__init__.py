"""csbplab: a computational laboratory for continuous-state branching processes.

Mechanisms and their regime classification, numerical evaluation of the
Laplace-exponent flow, exact and Euler path simulation, population/frequency
processes with settler detection, renormalized limit laws, and a statistical
verification harness tying simulation to theory.
"""

__version__ = "0.1.0"

from .catalog import catalog_names, get_entry, get_mechanism
from .errors import (
    AbsorbedStateError,
    ContractError,
    CsbplabError,
    FlowDomainError,
    MechanismError,
    QuadratureError,
    UndecidableError,
    UnsupportedMechanismError,
)
from .flow import FlowEvaluator, gaver_stehfest
from .mechanisms import (
    Atom,
    BranchingMechanism,
    ClassificationReport,
    ExponentialDensity,
    LogPowerDensity,
    Outcome,
    PowerDensity,
    RegimePrediction,
    classify,
    eval_psi,
    predict_regime,
    settler_mean_C,
)
from .paths import CsbpPath, PathConfig, dominating_coupling, feller_step, lamperti_path
from .population import (
    FrequencyMeasure,
    PopulationState,
    SettlerReport,
    detect_limit,
    frequency_at,
    simulate_blocks,
    simulate_fv_poisson,
    simulate_iv_cluster,
)

__all__ = [name for name in dir() if not name.startswith("_")]
