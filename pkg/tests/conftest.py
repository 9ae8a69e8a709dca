import numpy as np
import pytest

from csbplab.catalog import load_catalog
from csbplab.flow import FlowEvaluator
from csbplab.mechanisms import classify


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def reports(catalog):
    return {name: classify(e.mechanism) for name, e in catalog.items()}


@pytest.fixture(scope="session")
def flows(catalog, reports):
    """One shared evaluator per catalog mechanism (memo reuse across tests)."""
    return {name: FlowEvaluator(e.mechanism, report=reports[name])
            for name, e in catalog.items()}


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))
