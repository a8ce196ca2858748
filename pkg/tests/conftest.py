import pytest

from coffee.events import SourceType
from coffee.model import ModelConfig
from coffee.world import (
    WorldConfig,
    generate_requests,
    generate_world,
    simulate_events,
    simulate_labels,
)

TINY_CONFIG = WorldConfig(
    users=40,
    contents=50,
    ads=16,
    topics=5,
    d_z=6,
    d_c=8,
    horizon_days=8.0,
    activity_rate=24.0,
    requests_per_user=24,
    request_start_frac=0.5,
    codebook_size=8,
    n_authors=12,
    seed=11,
)


@pytest.fixture(scope="session")
def tiny_world():
    return generate_world(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_events(tiny_world):
    return simulate_events(tiny_world)


@pytest.fixture(scope="session")
def tiny_examples(tiny_world, tiny_events):
    requests = generate_requests(tiny_world)
    return simulate_labels(tiny_world, requests, tiny_events)


@pytest.fixture()
def tiny_model_config(tiny_world):
    return ModelConfig(
        catalog=tiny_world.catalog_sizes(),
        max_len=12,
        window_days=4.0,
    )


@pytest.fixture()
def tiny_ad_only_config(tiny_world):
    return ModelConfig(
        catalog=tiny_world.catalog_sizes(),
        sources=(SourceType.AD_IMPRESSION,),
        max_len=12,
        window_days=4.0,
    )
