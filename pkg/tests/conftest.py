from __future__ import annotations

import numpy as np
import pytest

from adaptive_gamp.config import LNP_TRUTH
from adaptive_gamp.services.model import (
    AwgnParams,
    InputParams,
    PoissonLnpParams,
    generate_instance,
)


@pytest.fixture
def sparse_prior() -> InputParams:
    return InputParams(rho=0.1, sigma_x_sq=1.0)


@pytest.fixture
def awgn_instance(sparse_prior):
    return generate_instance(300, 500, sparse_prior, AwgnParams(0.01), seed=11)


@pytest.fixture
def poisson_instance():
    return generate_instance(
        400, 200, InputParams(rho=0.1, sigma_x_sq=30.0), PoissonLnpParams(LNP_TRUTH), seed=5
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))
