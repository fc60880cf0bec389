"""
Shared fixtures for the gwldp test suites.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from backend.laws import GeometricLaw, TableLaw  # noqa: E402
from backend.model import Alphabet, ExplicitKernel, FactoredKernel, single_type_kernel  # noqa: E402
from backend.trees import TypedTree  # noqa: E402

SAMPLE_KERNELS = Path(__file__).resolve().parent / "sample_kernels"


@pytest.fixture
def ab():
    return Alphabet(("a", "b"))


@pytest.fixture
def geometric_kernel():
    """Single-type p(l) = 2^-(l+1)"""
    return single_type_kernel(GeometricLaw(0.5))


@pytest.fixture
def chain_kernel(ab):
    return FactoredKernel(ab, GeometricLaw(0.5), [[0.9, 0.1], [0.2, 0.8]])


@pytest.fixture
def binary_kernel():
    """Q{0|a} = Q{(a,a)|a} = 1/2"""
    a = Alphabet(("a",))
    return ExplicitKernel(a, [{a.config(): 0.5, a.config("a", "a"): 0.5}])


@pytest.fixture
def two_type_kernel(ab):
    return ExplicitKernel(ab, [
        {ab.config(): 0.5, ab.config("a", "b"): 0.25, ab.config("b"): 0.25},
        {ab.config(): 0.4, ab.config("a"): 0.3, ab.config("a", "a"): 0.3},
    ])


@pytest.fixture
def table_chain_kernel(ab):
    """Bounded factored kernel: p(0) = 0.4, p(2) = 0.6"""
    return FactoredKernel(ab, TableLaw((0.4, 0.0, 0.6)), [[0.5, 0.5], [0.5, 0.5]])


@pytest.fixture
def cherry(ab):
    """Root a with children (a, b), both leaves"""
    return TypedTree(ab, (0, 0, 1), (2, 0, 0), (-1, 0, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def kernels_dir():
    return SAMPLE_KERNELS
