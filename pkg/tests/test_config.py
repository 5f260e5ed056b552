import logging

import pytest

from structalign import config as config_module
from structalign.config import (
    ABLATION_GRID,
    AblationArm,
    ExperimentConfig,
    LossConfig,
    apply_ablation,
    configure_logging,
    load_config,
    parse_config,
    resolve_log_level,
)
from structalign.exceptions import ConfigError


@pytest.fixture(autouse=True)
def clear_log_env(monkeypatch):
    monkeypatch.delenv(config_module.LOG_ENV_VAR, raising=False)
    yield
    monkeypatch.delenv(config_module.LOG_ENV_VAR, raising=False)


def test_defaults_are_valid():
    config = ExperimentConfig()
    assert config.k_tasks == 5
    assert config.token_width == 32
    assert config.proto_dim == 32
    assert config.total_categories == 20
    assert config.ablation is AblationArm.FULL


def test_load_config_reads_flat_key_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# small stream\n"
        "k_tasks=3\n"
        "cats_per_task=2\n"
        "dims=16,8\n"
        "latent_dim=8\n"
        "instance_dim=2\n"
        "lambda2=0.5\n"
        "crp_symmetric=false\n"
        "ablation=cetf\n",
        encoding="utf-8",
    )

    config = load_config(path)

    assert config.k_tasks == 3
    assert config.dims == (16, 8)
    assert config.lambda2 == 0.5
    assert config.crp_symmetric is False
    assert config.ablation is AblationArm.CETF


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        load_config(tmp_path / "absent.cfg")
    assert "not found" in str(excinfo.value)


@pytest.mark.parametrize(
    "values,fragment",
    [
        ({"unknown_key": "1"}, "unknown_key"),
        ({"k_e": "5", "experts": "4"}, "k_e=5"),
        ({"lora_rank": "20"}, "lora_rank"),
        ({"dims": "16"}, "dims"),
        ({"k_tasks": "10", "cats_per_task": "4"}, "smaller than the category count"),
        ({"k_tasks": "1", "cats_per_task": "1"}, "at least 2 categories"),
        ({"latent_dim": "40"}, "latent_dim=40 exceeds"),
        ({"instance_dim": "32"}, "instance_dim=32"),
        ({"tau": "0"}, "tau"),
        ({"epochs": ""}, "without a value"),
    ],
)
def test_parse_config_rejects_bad_values(values, fragment):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(values)
    assert fragment in str(excinfo.value)


def test_config_is_frozen():
    config = ExperimentConfig()
    with pytest.raises(Exception):
        config.k_tasks = 2


def test_echo_round_trips_through_parse():
    config = ExperimentConfig(k_tasks=2, dims=(16, 12), latent_dim=12, ablation=AblationArm.CRP)
    echoed = config.echo()
    assert echoed["dims"] == "16,12"
    assert echoed["ablation"] == "crp"
    assert parse_config({k: str(v) for k, v in echoed.items()}) == config


class TestAblation:
    @pytest.mark.parametrize(
        "arm,lambda1,lambda2",
        [
            (AblationArm.FRAMEWORK, 0.0, 0.0),
            (AblationArm.CRP, 0.0, 10.0),
            (AblationArm.CETF, 0.1, 0.0),
            (AblationArm.FULL, 0.1, 10.0),
        ],
    )
    def test_arm_overrides(self, arm, lambda1, lambda2):
        config = apply_ablation(ExperimentConfig(), arm)
        assert (config.lambda1, config.lambda2) == (lambda1, lambda2)
        assert config.ablation is arm

    def test_accepts_string_arm(self):
        assert apply_ablation(ExperimentConfig(), "framework").lambda2 == 0.0

    def test_unknown_arm(self):
        with pytest.raises(ConfigError):
            apply_ablation(ExperimentConfig(), "everything")

    def test_grid_excludes_joint(self):
        assert AblationArm.JOINT not in ABLATION_GRID
        assert len(ABLATION_GRID) == 4


def test_loss_config_from_experiment():
    loss = LossConfig.from_experiment(ExperimentConfig(lambda1=0.3, tau2=0.5))
    assert loss.lambda1 == 0.3
    assert loss.tau2 == 0.5
    assert loss.tau == 0.07


@pytest.mark.parametrize(
    "raw,level",
    [(None, logging.INFO), ("debug", logging.DEBUG), ("ERROR", logging.ERROR), ("verbose", logging.INFO)],
)
def test_resolve_log_level(raw, level):
    assert resolve_log_level(raw) == level


def test_configure_logging_honours_env(monkeypatch):
    monkeypatch.setenv(config_module.LOG_ENV_VAR, "debug")
    original_level = config_module.logger.level
    try:
        configure_logging()
        assert config_module.logger.level == logging.DEBUG
    finally:
        config_module.logger.setLevel(original_level)


def test_configure_logging_idempotent():
    # Remove any pre-existing handlers for a clean slate.
    original_handlers = list(config_module.logger.handlers)
    for handler in original_handlers:
        config_module.logger.removeHandler(handler)

    try:
        configure_logging()
        first_count = len(config_module.logger.handlers)
        # Calling configure_logging again should not add extra handlers.
        configure_logging()
        second_count = len(config_module.logger.handlers)

        assert first_count == 1
        assert second_count == first_count
        assert isinstance(config_module.logger.handlers[0], logging.Handler)
    finally:
        # Restore original handlers so other modules aren't affected.
        for handler in list(config_module.logger.handlers):
            config_module.logger.removeHandler(handler)
        for handler in original_handlers:
            config_module.logger.addHandler(handler)
