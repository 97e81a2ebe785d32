"""Shared fixtures: reference models and a scatter config tuned for test speed."""
import numpy as np
import pytest

from physics.families import ThreeStateFamily
from physics.model_core import DiabaticModel
from physics.propagator import ScatterConfig


@pytest.fixture
def lz_model():
    """Two-level Landau–Zener crossing with b = 1, g = 0.5."""
    return DiabaticModel(B=[1.0, 0.0], A=[[0.0, 0.5], [0.5, 0.0]])


@pytest.fixture
def reference_family():
    """Three-state family with b2 = 1 and b1 = τ."""
    return ThreeStateFamily(gamma12=0.354, gamma13=0.327, gamma23=0.3, eps0=0.52, beta1=1.0, beta2=1.0)


@pytest.fixture
def cfg():
    return ScatterConfig(rel_tol=1e-9, abs_tol=1e-11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
