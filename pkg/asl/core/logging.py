import logging
from logging.config import dictConfig
import sys
from .config import settings


def build_log_config(debug: bool) -> dict:
    """Package records go to stderr; stdout is left to the validation report."""
    level = "DEBUG" if debug else "INFO"
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "format": "%(asctime)s [%(levelname)s] %(name)s:%(lineno)d - %(message)s",
            },
        },
        "handlers": {
            "stderr": {
                "class": "logging.StreamHandler",
                "level": level,
                "formatter": "default",
                "stream": sys.stderr,
            },
        },
        "loggers": {
            "asl": {"level": level, "propagate": True},
        },
        "root": {
            "handlers": ["stderr"],
            "level": "WARNING",
        },
    }


dictConfig(build_log_config(settings.DEBUG))

logger = logging.getLogger("asl")
