"""
Shared fixtures for the AnosovLab tests.

Scenario balls are cached per session; they are read-only in every test.
"""

import dataclasses

import numpy as np
import pytest

from config import SCENARIOS_DIR
from lie_core import GroupDescriptor
from scenario import load_scenario
from word_engine import GeneratorSet, OrbitBall, build_ball


def scenario_path(name: str):
    return SCENARIOS_DIR / f"{name}.toml"


def random_sl(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """A random element of SL(n, R)."""
    m = np.eye(n) + scale * rng.normal(size=(n, n))
    det = np.linalg.det(m)
    if det < 0:
        m[:, 0] *= -1.0
        det = -det
    return m / det ** (1.0 / n)


def cantor_points(level: int) -> np.ndarray:
    """Left endpoints of the intervals of the middle-thirds construction at the given level."""
    points = np.zeros(1)
    for k in range(1, level + 1):
        points = np.concatenate([points, points + 2.0 / 3**k])
    return np.sort(points)


def linear_ball(ball: OrbitBall, slope: float = 1.0) -> OrbitBall:
    """The same words with Cartan projection slope * |gamma| * (1, -1): every alpha-value is 2 slope |gamma|."""
    cartan = slope * np.outer(ball.lengths, [1.0, -1.0])
    return dataclasses.replace(ball, cartan=cartan)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sl2():
    return GroupDescriptor.sl(2)


@pytest.fixture(scope="session")
def sl3():
    return GroupDescriptor.sl(3)


@pytest.fixture(scope="session")
def product2():
    return GroupDescriptor.product(2)


@pytest.fixture(scope="session")
def schottky():
    return load_scenario(scenario_path("schottky_sl2"))


@pytest.fixture(scope="session")
def schottky_gens(schottky):
    return GeneratorSet.from_scenario(schottky)


@pytest.fixture(scope="session")
def schottky_ball(schottky_gens):
    return build_ball(schottky_gens, 6)


@pytest.fixture(scope="session")
def schottky_ball_large(schottky_gens):
    return build_ball(schottky_gens, 8)


@pytest.fixture(scope="session")
def sl3_schottky():
    return load_scenario(scenario_path("sl3_schottky"))


@pytest.fixture(scope="session")
def sl3_ball(sl3_schottky):
    return build_ball(GeneratorSet.from_scenario(sl3_schottky), 5)


@pytest.fixture(scope="session")
def selfjoin():
    return load_scenario(scenario_path("selfjoin_product"))


@pytest.fixture(scope="session")
def selfjoin_ball(selfjoin):
    return build_ball(GeneratorSet.from_scenario(selfjoin), 6)
