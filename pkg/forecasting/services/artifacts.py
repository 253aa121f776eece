"""
Output files written by the commands

history.csv, horizon_metrics.csv and the JSON summaries are plain files any
plotting tool can read; every JSON document carries the config hash and the
package version. See docs/formats.md.
"""

import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .trainer import HISTORY_COLUMNS

logger = logging.getLogger(__name__)

HISTORY_FILE = 'history.csv'
HORIZON_FILE = 'horizon_metrics.csv'
SUMMARY_FILE = 'summary.json'
FLOAT_FORMAT = '%.10g'


def jsonable(value):
    """numpy scalars and non-finite floats -> JSON-safe values"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def provenance(config_hash: str) -> dict:
    from forecasting import __version__

    return {'artifact_version': __version__, 'config_hash': config_hash}


def write_json(path, document: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(document), indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info("wrote %s", path)
    return path


def write_csv(path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def write_history(directory, history: pd.DataFrame) -> Path:
    return write_csv(Path(directory) / HISTORY_FILE, history[HISTORY_COLUMNS])


def write_horizon_metrics(directory, table: pd.DataFrame, name: Optional[str] = None) -> Path:
    return write_csv(Path(directory) / (name or HORIZON_FILE), table)


__all__ = [
    'HISTORY_FILE', 'HORIZON_FILE', 'SUMMARY_FILE', 'jsonable', 'provenance', 'write_csv', 'write_history',
    'write_horizon_metrics', 'write_json',
]
