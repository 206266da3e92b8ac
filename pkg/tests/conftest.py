import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mlrdyn.model import DamageEvent, MorphologyVectors, apply_damage, build_hexapod_default

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def hexapod():
    return build_hexapod_default()


def damage_morphologies(model):
    healthy = MorphologyVectors.healthy(model)
    return {
        "healthy": healthy,
        "legs34_removed": apply_damage(healthy, DamageEvent.remove_legs(2, 3)),
        "legs45_one_link": apply_damage(healthy, DamageEvent.truncate((3, 4), 1)),
    }


@pytest.fixture(scope="session")
def morphologies(hexapod):
    return damage_morphologies(hexapod)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
