import pytest

from bayescall.pileup import GeneratorConfig, generate_dataset


@pytest.fixture(scope="session")
def default_dataset():
    """20k examples from the default generator, shared across the session."""
    return generate_dataset(GeneratorConfig(), 20000, 42)
