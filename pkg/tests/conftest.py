import random

import pytest

from synforge.cookie import FourTuple, SecretKey


@pytest.fixture
def key():
    return SecretKey(bytes(range(16)))


@pytest.fixture
def other_key():
    return SecretKey(bytes(range(16, 32)))


def random_tuple(rng: random.Random) -> FourTuple:
    return FourTuple(
        rng.getrandbits(32), rng.randrange(1, 65536),
        rng.getrandbits(32), rng.randrange(1, 65536),
    )
