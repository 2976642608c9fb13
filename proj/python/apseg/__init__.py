"""Automatic point prompts for nucleus instance segmentation."""

import json

from ._core import (
    ApsegError,
    Model as _Model,
    aji,
    detection_scores,
    dice,
    generate_scene,
    hungarian,
    panoptic_quality,
    read_dataset,
    run_cli,
    segment,
)

__all__ = [
    "ApsegError",
    "Model",
    "aji",
    "detection_scores",
    "dice",
    "generate_scene",
    "hungarian",
    "panoptic_quality",
    "read_dataset",
    "run_cli",
    "segment",
]


class Model(_Model):
    """Prompt model; keyword arguments override the default configuration."""

    def __init__(self, **config):
        super().__init__(json.dumps(config))

    @property
    def config(self):
        return json.loads(self.config_json())
