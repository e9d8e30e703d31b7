import pytest

from togate import AttributeSpace, Environment, generate_dataset


@pytest.fixture(scope="session")
def default_space():
    return AttributeSpace(6, 4)


@pytest.fixture(scope="session")
def default_split(default_space):
    # the default desk-scale game: 18 train personas x 10 tasks, 2 test personas
    return generate_dataset(42, default_space, 20, 10, 2, 0.9)


@pytest.fixture(scope="session")
def default_env(default_space):
    return Environment(default_space)


@pytest.fixture(scope="session")
def small_split():
    return generate_dataset(5, AttributeSpace(4, 3), 6, 3, 2, 0.8)


@pytest.fixture(scope="session")
def small_env(small_split):
    return Environment(small_split.space)
