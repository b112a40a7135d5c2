import numpy as np
import pytest

from flexor.aggregation import (TABLE_VARIANTS, apply_boundary_variant, build_feasible_set,
                                compute_for, compute_merged_for, compute_operating_point,
                                full_7d)
from flexor.grid_model import Branch, Bus, Generator, GridCase, load_case


def two_bus_case(p_demand=0.5, q_demand=0.0, generators=(), r=0.0, x=0.1, v_bounds=(0.9, 1.1)):
    """Boundary bus 1 feeding bus 2 through one interconnection branch."""
    buses = (Bus(1, *v_bounds, is_boundary=True), Bus(2, *v_bounds, p_demand, q_demand))
    return GridCase("two_bus", 1.0, buses, (Branch(1, 2, r, x, True),), tuple(generators))


def two_bus_gen(f_max=0.3, p_demand=0.5, q_demand=0.1, s_max=None, alpha=0.95):
    gen = Generator(2, f_max, f_max / np.cos(alpha) if s_max is None else s_max, alpha)
    return two_bus_case(p_demand, q_demand, (gen,), r=0.01, x=0.1)


@pytest.fixture(scope="session")
def cigre():
    return load_case()


@pytest.fixture(scope="session")
def cigre_op(cigre):
    return compute_operating_point(cigre)


@pytest.fixture(scope="session")
def cigre_fs(cigre, cigre_op):
    return build_feasible_set(cigre, cigre_op)


@pytest.fixture(scope="session")
def cigre_fors(cigre, cigre_fs):
    """7D FORs of the three boundary variants."""
    coupling = full_7d(cigre)
    return {v: compute_for(apply_boundary_variant(cigre_fs, v), coupling)
            for v in TABLE_VARIANTS}


@pytest.fixture(scope="session")
def cigre_merged(cigre):
    return compute_merged_for(cigre)
