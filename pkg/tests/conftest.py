"""Shared scenario fixtures; expensive solves are session-cached."""

import numpy as np
import pytest

from mfg_mintime.congestion import constant_speed_field
from mfg_mintime.geometry import (
    Box,
    BoxEdgeTarget,
    BoxMinusObstacles,
    Disk,
    DomainSpec,
    IntervalEndTarget,
    Interval,
    build_domain,
)
from mfg_mintime.hjb import solve_value_function


@pytest.fixture(scope="session")
def corridor_domain():
    return build_domain(DomainSpec(
        Interval(0.0, 1.0), IntervalEndTarget("right"),
        resolution=100, band_cells=8,
    ))


@pytest.fixture(scope="session")
def corridor_field(corridor_domain):
    return constant_speed_field(corridor_domain, 1.0)


@pytest.fixture(scope="session")
def corridor_vf(corridor_domain, corridor_field):
    return solve_value_function(corridor_domain, corridor_field)


@pytest.fixture(scope="session")
def box_domain():
    return build_domain(DomainSpec(
        Box(0.0, 1.0, 0.0, 1.0), BoxEdgeTarget("right"),
        resolution=32, band_cells=6,
    ))


@pytest.fixture(scope="session")
def box_field(box_domain):
    return constant_speed_field(box_domain, 1.0)


@pytest.fixture(scope="session")
def box_vf(box_domain, box_field):
    return solve_value_function(box_domain, box_field, n_dirs=32)


@pytest.fixture(scope="session")
def obstacle_domain():
    return build_domain(DomainSpec(
        BoxMinusObstacles(Box(0.0, 1.0, 0.0, 1.0), (Disk(0.5, 0.5, 0.15),)),
        BoxEdgeTarget("right"), resolution=32, band_cells=6,
    ))


@pytest.fixture(scope="session")
def obstacle_field(obstacle_domain):
    return constant_speed_field(obstacle_domain, 1.0)


@pytest.fixture(scope="session")
def obstacle_vf(obstacle_domain, obstacle_field):
    return solve_value_function(obstacle_domain, obstacle_field, n_dirs=32)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
