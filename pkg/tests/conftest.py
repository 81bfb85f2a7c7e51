import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_homography(rng, perspective=0.01):
    """A well-conditioned random homography for round-trip properties."""
    theta = rng.uniform(-0.5, 0.5)
    c, s = np.cos(theta), np.sin(theta)
    m = np.array(
        [
            [c * rng.uniform(0.5, 2.0), -s, rng.uniform(-10, 10)],
            [s, c * rng.uniform(0.5, 2.0), rng.uniform(-10, 10)],
            [rng.uniform(-1, 1) * perspective, rng.uniform(-1, 1) * perspective, 1.0],
        ]
    )
    return m
