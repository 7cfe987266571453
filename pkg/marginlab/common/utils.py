#    Copyright 2025 Genesis Corporation.
#
#    All Rights Reserved.
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.
import os
import csv
import json
import logging
import typing as tp

from marginlab.common import constants as c

LOG = logging.getLogger(__name__)


def cfg_from_options(
    options: tp.Iterable[str],
    prefix: str | None = None,
) -> tp.Dict[str, str | bool]:
    """
    Parse `key=value` options and return them as a configuration
    dictionary.

    Parameters
    ----------
    options : Iterable[str]
        Raw options, for instance collected from repeated `--set` flags.
    prefix : str | None
        Filter the options by prefix. If `None`, all options are returned.

    Returns
    -------
    cfg : Dict[str, str | bool]
        The configuration dictionary. Boolean values are for options that
        do not have an equals sign, i.e. they are treated as boolean.
    """
    options = [opt.strip() for opt in options if opt.strip()]

    # Filter by prefix
    if prefix:
        options = [opt for opt in options if opt.startswith(prefix)]

    cfg: tp.Dict[str, str | bool] = {}
    for opt in options:
        # Treat as boolean if no equals
        if "=" not in opt:
            cfg[opt] = True
            continue

        key, value = opt.split("=", 1)
        cfg[key.strip()] = value.strip()

    return cfg


def resolve_seed(seed: int | None = None) -> int:
    """Explicit seed first, then the environment, then the default."""
    if seed is not None:
        return int(seed)

    env_value = os.environ.get(c.ENV_SEED)
    if env_value:
        try:
            return int(env_value)
        except ValueError:
            LOG.warning("Ignoring non-integer %s=%r", c.ENV_SEED, env_value)

    return c.DEFAULT_SEED


def fmt_float(value: float) -> str:
    return format(float(value), c.CSV_FLOAT_FORMAT)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent and not os.path.exists(parent):
        os.makedirs(parent)


def dump_json(data: tp.Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_json(data: tp.Any, path: str) -> None:
    """Write JSON atomically, a reader never sees a half-written file."""
    _ensure_parent(path)

    tmp_file = f"{path}.tmp"
    with open(tmp_file, "w") as f:
        f.write(dump_json(data))
    os.replace(tmp_file, path)


def save_csv(
    header: tp.Sequence[str],
    rows: tp.Iterable[tp.Sequence[tp.Any]],
    path: str,
) -> None:
    _ensure_parent(path)

    tmp_file = f"{path}.tmp"
    with open(tmp_file, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [fmt_float(v) if isinstance(v, float) else v for v in row]
            )
    os.replace(tmp_file, path)


def load_json(path: str) -> tp.Any:
    with open(path) as f:
        return json.load(f)
