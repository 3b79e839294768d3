import numpy as np
import pytest

from vineseg.network import build_network, fcn_spec, random_weights

# (annotated, estimated) flower counts for ten field images
FIELD_COUNTS = [
    (1157, 1274), (839, 1056), (1074, 1242), (1312, 1527), (1876, 1774),
    (935, 1113), (1138, 1358), (1110, 1367), (971, 1183), (1320, 1432),
]
FIELD_EOA = [1.101, 1.258, 1.156, 1.163, 0.945, 1.190, 1.193, 1.231, 1.218, 1.084]


def small_net(patch=256, scale=0.125, seed=0):
    spec = fcn_spec(patch, width_scale=scale)
    return build_network(spec, random_weights(spec, seed=seed))


@pytest.fixture(scope="session")
def tiny_net():
    return small_net()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
