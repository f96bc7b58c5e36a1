"""Layered run configuration: command line over user file over defaults.

Only a small whitelist of keys may come from command-line flags; everything
else (model knobs, pipeline thresholds) must come through the JSON config
file, which may set any key. Each resolved key remembers where its value
came from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

from .exceptions import BadConfigFile, UnknownCliKey

__all__ = ["CLI_KEYS", "DEFAULTS", "Config", "load_config"]

# Keys settable directly as command-line flags; all others are file-only.
CLI_KEYS = (
    "task",
    "model",
    "dataset",
    "config_file",
    "seed",
    "output_dir",
    "batch_size",
    "space_file",
    "search_alg",
)

DEFAULTS: dict = {
    "task": None,
    "model": None,
    "dataset": None,
    "config_file": None,
    "seed": 0,
    "output_dir": "runs",
    "batch_size": 32,
    "space_file": None,
    "search_alg": "GridSearch",
    # pipeline
    "input_window": 12,
    "output_window": 12,
    "train_ratio": 0.7,
    "val_ratio": 0.1,
    "test_ratio": 0.2,
    "scaler": "none",
    "horizons": None,  # None: every horizon in {3, 6, 12} within the window
    "mape_floor": None,  # None: 5 for grid-layout runs, 0 otherwise
    # models
    "ha_period": None,  # None: one day of slots
    "var_order": 1,
    "var_max_dim": 400,
    "var_ridge": 1e-8,
    # map matching
    "match_sigma": 10.0,
    "match_beta": 5.0,
    "match_radius": 200.0,
    "match_max_candidates": 10,
    # ranking
    "min_checkins": 4,
    "min_trajs_per_user": 2,
    "min_visits_per_location": 0,
    "traj_window_mode": "time",
    "traj_window_size": 259200,
    "ranking_k": 5,
    "ranking_train_ratio": 0.6,
    "ranking_val_ratio": 0.2,
    "ranking_test_ratio": 0.2,
    # tuning
    "n_trials": 10,
    "objective": None,  # None: the task's primary validation metric
}


@dataclass
class Config:
    """Resolved key-value view plus per-key provenance.

    ``provenance[key]`` is one of ``"cli"``, ``"user_file"``, ``"default"``.
    """

    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def as_dict(self) -> dict:
        return dict(self.values)


def _read_config_file(path: Union[str, Path]) -> dict:
    p = Path(path)
    if not p.is_file():
        raise BadConfigFile(f"config file {p} does not exist")
    try:
        payload = json.loads(p.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadConfigFile(f"config file {p}: {exc}") from None
    if not isinstance(payload, dict):
        raise BadConfigFile(f"config file {p} must hold a JSON object")
    return payload


def load_config(
    cli_args: Mapping | None = None,
    file_values: Union[Mapping, str, Path, None] = None,
    defaults: Mapping | None = None,
) -> Config:
    """Merge the three layers; later layers win: defaults < file < cli.

    ``cli_args`` may only use whitelisted keys (UnknownCliKey otherwise) and
    None values there mean "not given". ``file_values`` is either a mapping
    or a path to a JSON object file; file keys are unrestricted. When the
    cli layer names a config_file and no explicit ``file_values`` is passed,
    that file is loaded as the middle layer.
    """
    cli_args = dict(cli_args or {})
    for key in cli_args:
        if key not in CLI_KEYS:
            raise UnknownCliKey(
                f"{key!r} cannot be set from the command line; "
                f"allowed flags: {', '.join(CLI_KEYS)}"
            )
    cli_args = {k: v for k, v in cli_args.items() if v is not None}

    if file_values is None and cli_args.get("config_file"):
        file_values = cli_args["config_file"]
    if isinstance(file_values, (str, Path)):
        file_values = _read_config_file(file_values)
    file_values = dict(file_values or {})

    merged = Config()
    for key, value in dict(defaults if defaults is not None else DEFAULTS).items():
        merged.values[key] = value
        merged.provenance[key] = "default"
    for key, value in file_values.items():
        merged.values[key] = value
        merged.provenance[key] = "user_file"
    for key, value in cli_args.items():
        merged.values[key] = value
        merged.provenance[key] = "cli"
    return merged
