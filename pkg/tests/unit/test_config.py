import logging
import sys

from asl.core.config import Settings, settings
from asl.core.logging import build_log_config, logger


def test_defaults():
    assert settings.RECOVERY_WINDOW == 50
    assert settings.DEFAULT_SEED == 20200504
    assert settings.MIN_DECISION_SAMPLES == 100


def test_environment_override(monkeypatch):
    monkeypatch.setenv("RECOVERY_WINDOW", "20")
    monkeypatch.setenv("DEBUG", "true")
    fresh = Settings()
    assert fresh.RECOVERY_WINDOW == 20
    assert fresh.DEBUG is True


def test_package_logger_reaches_root(caplog):
    assert logger.name == "asl"
    assert logger.propagate
    with caplog.at_level(logging.INFO):
        logging.getLogger("asl.services.mc").info("batch done")
    assert "batch done" in caplog.text


def test_log_config_levels():
    config = build_log_config(debug=True)
    assert config["loggers"]["asl"]["level"] == "DEBUG"
    assert config["handlers"]["stderr"]["stream"] is sys.stderr
    assert build_log_config(debug=False)["handlers"]["stderr"]["level"] == "INFO"
