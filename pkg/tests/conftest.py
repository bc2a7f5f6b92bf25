import os

# keep BLAS single-threaded: the suite's matrices are small and worker
# processes must not oversubscribe the machine
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from cdimap.channel import EnvironmentSpec, FrequencyGrid, synth_world
from cdimap.evaluate import world_from_sweeps
from cdimap.scenario import reference_scenario


@pytest.fixture(scope="session")
def ref_scenario():
    return reference_scenario(seed=3)


@pytest.fixture(scope="session")
def ref_locations(ref_scenario):
    return ref_scenario.locations()


@pytest.fixture(scope="session")
def small_world(ref_scenario, ref_locations):
    """Desk-scale world: 127 locations, 1001-point sweeps."""
    grid = FrequencyGrid(2e9, 10e9, 1001)
    sweeps = synth_world(EnvironmentSpec(), ref_locations, ref_scenario.bs, grid, seed=3)
    return world_from_sweeps(ref_locations, sweeps)
