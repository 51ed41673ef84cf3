"""
Utility for loading configuration values.

This module wraps the `dotenv` loader.  Run configuration files use the same
key-value syntax as `.env` files, with keys grouped in flat sections by
prefix (`DATA_`, `MODEL_`, `TRAIN_`, `BASELINE_`, `EVAL_`, `RUN_`).  Values
can also come from environment variables carrying an `EVCS_` prefix, e.g.
`EVCS_TRAIN_EPOCHS=5`.  See `config.example.env` in the root directory.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

from dotenv import dotenv_values, load_dotenv

ENV_PREFIX = "EVCS_"


def load_env(required_vars: Optional[Iterable[str]] = None) -> None:
    """Load variables from a `.env` file and optionally validate them.

    Parameters
    ----------
    required_vars: Iterable[str] | None
        Names of variables that must be present in the environment.  If any
        variable is missing after loading, a RuntimeError will be raised.

    Notes
    -----
    The `.env` file is searched in the current working directory and parent
    directories.  Existing environment variables are never overwritten.
    """
    load_dotenv(override=False)

    if required_vars:
        missing = [var for var in required_vars if not os.getenv(var)]
        if missing:
            missing_list = ", ".join(missing)
            raise RuntimeError(
                f"Missing required environment variables: {missing_list}. "
                "Create a `.env` file or export them in your shell."
            )


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Return the key-value pairs of a config file with upper-cased keys."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return {
        key.strip().upper(): (value or "").strip()
        for key, value in dotenv_values(path).items()
    }


def environment_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Config keys set through `EVCS_`-prefixed environment variables."""
    environ = os.environ if environ is None else environ
    return {
        key[len(ENV_PREFIX):].upper(): value.strip()
        for key, value in environ.items()
        if key.upper().startswith(ENV_PREFIX) and len(key) > len(ENV_PREFIX)
    }


def merged_settings(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Dict[str, str]:
    """Layer config file < environment < explicit overrides."""
    merged: Dict[str, str] = {}
    if config_path:
        merged.update(read_config_file(config_path))
    merged.update(environment_overrides(environ))
    merged.update({key.upper(): str(value) for key, value in (overrides or {}).items()})
    return merged
