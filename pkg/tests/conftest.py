import numpy as np
import pytest

from roomauth import _backend
from roomauth.evaluation import Furniture, RoomSpec, generate_room


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


def small_room_spec(seed=7, density=600.0, noise=0.0):
    furniture = (
        Furniture("box", (0.8, 0.5), (1.2, 0.6, 0.8), 0.3),
        Furniture("cylinder", (-1.0, -0.6), (0.5, 0.5, 0.9), 0.0),
        Furniture("lshape", (-0.6, 0.7), (1.4, 1.0, 0.7), 1.1, 0.0, 0.45),
        Furniture("box", (1.2, -0.8), (0.9, 0.7, 0.06), 0.7, 0.75),
    )
    return RoomSpec(seed, (4.5, 3.5, 2.6), density, furniture, noise)


@pytest.fixture(scope="session")
def small_room():
    return generate_room(small_room_spec())


@pytest.fixture(scope="session")
def other_room():
    spec = RoomSpec(99, (5.0, 3.2, 2.5), 600.0, (
        Furniture("box", (-1.4, 0.9), (0.8, 0.8, 1.6), 0.0),
        Furniture("box", (1.0, -0.2), (1.6, 0.9, 0.7), 1.2),
        Furniture("cylinder", (0.2, 1.0), (0.7, 0.7, 0.5), 0.0),
    ))
    return generate_room(spec)
