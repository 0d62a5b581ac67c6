import pytest

from cmjmart import spectral
from cmjmart.examples import example_model
from cmjmart.spectral import Region

_REGIONS = {
    "1": Region(0.25, 2.0, -5.0, 5.0),
    "lattice": Region(0.3, 1.2, -7.0, 7.0),
}


@pytest.fixture(scope="session")
def analyses():
    """Cached spectral pipelines for the built-in models (pure outputs,
    safe to share across tests)."""
    cache = {}

    def get(name, rate=1.0):
        key = (name, rate)
        if key not in cache:
            model = example_model(name, rate=rate)
            cache[key] = (model, spectral.analyze(model, _REGIONS.get(name)))
        return cache[key]

    return get
