import pytest

from structalign.config import ExperimentConfig
from structalign.harness import generate_task_stream
from structalign.model import init_model_state

SMALL = dict(
    k_tasks=2,
    cats_per_task=2,
    shots=4,
    test_per_category=3,
    n_tokens=3,
    n_frames=2,
    latent_dim=4,
    instance_dim=1,
    epochs=1,
    batch=8,
    layers=1,
    experts=2,
    k_e=1,
    lora_rank=2,
    dims=(8, 8),
)


@pytest.fixture
def small_config():
    return ExperimentConfig(**SMALL)


@pytest.fixture
def small_state(small_config):
    return init_model_state(small_config)


@pytest.fixture
def small_stream(small_config):
    return generate_task_stream(small_config)


@pytest.fixture
def make_config():
    def factory(**overrides) -> ExperimentConfig:
        return ExperimentConfig(**{**SMALL, **overrides})

    return factory
