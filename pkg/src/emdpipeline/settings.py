"""
Settings of the emd-motion command-line pipeline.
"""

import copy
from typing import Any

LOG_LEVEL = "INFO"
VERBOSE_LOG_LEVEL = "DEBUG"

LOGGING: dict[str, Any] = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "rich": {"format": "%(name)s: %(message)s", "datefmt": "[%X]"},
    },
    "handlers": {
        "console": {
            "class": "rich.logging.RichHandler",
            "formatter": "rich",
            "show_path": False,
            "rich_tracebacks": False,
        },
    },
    "root": {"handlers": ["console"], "level": "WARNING"},
    "loggers": {
        "emdmotion": {"level": LOG_LEVEL},
        "emdpipeline": {"level": LOG_LEVEL},
    },
}


class ExitCodes:
    """Process exit codes of the command-line interface."""

    SUCCESS = 0
    CONFIGURATION = 1
    DATA = 2
    THRESHOLD = 3


class OutputFiles:
    """File and directory names written into the output directory."""

    DETECTIONS = "detections.txt"
    PROPOSALS = "proposals.txt"
    PROPOSAL_POINTS = "proposals.bin"
    MANIFEST = "manifest.yaml"
    TIMINGS = "timings.yaml"
    CONFIG = "config.yaml"
    METRICS = "metrics.csv"
    RECALL = "recall_by_distance.csv"
    MOTION_DIR = "motion"
    FLOW_DIR = "flow"
    BEV_DIR = "bev"


def logging_config(verbose: bool = False) -> dict[str, Any]:
    """Logging dictConfig with the level of both package loggers set for the run.

    Args:
        verbose: Log per-cell details

    Returns:
        A copy of ``LOGGING`` ready for ``logging.config.dictConfig``
    """
    config = copy.deepcopy(LOGGING)
    for values in config["loggers"].values():
        values["level"] = VERBOSE_LOG_LEVEL if verbose else LOG_LEVEL
    return config
