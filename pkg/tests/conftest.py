import numpy as np
import pytest

from chbfem import MaterialParams, build_unit_square_mesh
from chbfem.solvers import ChbSystem, FieldState


@pytest.fixture(scope="session")
def desk_mesh():
    return build_unit_square_mesh(16)


@pytest.fixture(scope="session")
def small_mesh():
    return build_unit_square_mesh(4)


@pytest.fixture()
def baseline_params():
    return MaterialParams()


def random_state(system: ChbSystem, rng: np.random.Generator,
                 phi_low=0.15, phi_high=0.85, n=1) -> FieldState:
    """Random field state with phi away from the interpolation clamp points."""
    return FieldState(
        phi=rng.uniform(phi_low, phi_high, system.nv),
        mu=rng.normal(0.0, 0.1, system.nv),
        u=rng.normal(0.0, 0.01, 2 * system.nv),
        p=rng.normal(0.0, 0.1, system.nc),
        q=rng.normal(0.0, 0.1, system.ne),
        n=n)
