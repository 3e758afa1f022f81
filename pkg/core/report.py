"""
Report bundle
CSV and JSON artifacts of one experiment run plus the manifest describing them.
"""

import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

import core
from core import errors
from utils.helpers import ensure_directory

CSV_SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.10g"


def to_builtin(value: Any) -> Any:
    """json.dump default hook for numpy scalars and arrays"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path: Union[str, Path], payload: Any):
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=to_builtin)
        handle.write("\n")


def status_of(error: Exception) -> str:
    """Short status label recorded in report rows for a failed grid point"""
    if isinstance(error, errors.InfeasibleProblemError):
        return error.status
    labels = (
        (errors.InfeasibleBetaError, "infeasible_beta"),
        (errors.BracketError, "no_bracket"),
        (errors.InstabilityError, "unstable"),
        (errors.ChainStructureError, "multichain"),
        (errors.DomainError, "out_of_domain"),
        (errors.NumericalError, "numerical"),
        (errors.InvalidInputError, "invalid"),
    )
    for kind, label in labels:
        if isinstance(error, kind):
            return label
    return "error"


class ReportBundle:
    """Collects the artifacts of a run under one output directory"""

    def __init__(self, out_dir: Union[str, Path], experiment: str, config_digest: str, seed: Optional[int]):
        self.out_dir = Path(out_dir)
        self.experiment = experiment
        self.config_digest = config_digest
        self.seed = seed
        self.artifacts: List[str] = []
        self.summary: Dict[str, Any] = {}
        self.logger = logging.getLogger("core.report")
        ensure_directory(str(self.out_dir))

    def _register(self, name: str) -> Path:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.out_dir / name

    def write_csv(self, name: str, frame: pd.DataFrame, columns: Optional[Sequence[str]] = None) -> Path:
        path = self._register(name)
        if columns is not None:
            frame = frame.reindex(columns=list(columns))
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        self.logger.debug(f"wrote {path} ({len(frame)} rows)")
        return path

    def write_records(self, name: str, rows: List[Dict[str, Any]], columns: Sequence[str]) -> Path:
        return self.write_csv(name, pd.DataFrame(rows, columns=list(columns)), columns)

    def write_json(self, name: str, payload: Any) -> Path:
        path = self._register(name)
        write_json(path, payload)
        return path

    def manifest(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "config_hash": self.config_digest,
            "seed": self.seed,
            "version": core.__version__,
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "artifacts": list(self.artifacts),
            "summary": {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in self.summary.items()},
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }

    def write_manifest(self) -> Path:
        path = self.out_dir / "manifest.json"
        write_json(path, self.manifest())
        return path
