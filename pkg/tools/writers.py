import csv
import io
import json
import math
import os
import sys
from typing import Any, Dict, List, Optional, TextIO

import numpy as np

from models.errors import InvalidParameterError

SIGNIFICANT_DIGITS = 12
MISSING = "NA"
# wall-clock keys kept only when the caller asks for a stamp
VOLATILE_KEYS = ("timestamp",)


def clean_value(value: Any) -> Any:
    """Convert numpy scalars and containers to plain JSON values, floats rounded to 12 digits."""
    if isinstance(value, dict):
        return {str(key): clean_value(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [clean_value(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if hasattr(value, "value"):
        return value.value
    return value


def format_cell(value: Any) -> str:
    value = clean_value(value)
    if value is None:
        return MISSING
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.{SIGNIFICANT_DIGITS}g}"
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return str(value)


class ArtifactWriter:
    def __init__(self, stdout: Optional[TextIO] = None):
        self.stdout = stdout
        self.written: List[str] = []

    @staticmethod
    def prepare_metadata(metadata: Dict[str, Any], stamp: bool) -> Dict[str, Any]:
        return {key: value for key, value in metadata.items() if stamp or key not in VOLATILE_KEYS}

    def render_json(self, records: List[Dict[str, Any]], params: Dict[str, Any],
                    metadata: Dict[str, Any]) -> str:
        document = {"params": params, "results": records, "metadata": metadata}
        return json.dumps(clean_value(document), indent=2, allow_nan=False) + "\n"

    def render_csv(self, records: List[Dict[str, Any]], params: Dict[str, Any],
                   metadata: Dict[str, Any]) -> str:
        """
        One row per record; the resolved parameters and metadata ride along as
        JSON strings in the last two columns of every row.
        """
        columns: List[str] = []
        for record in records:
            for key in record:
                if key not in columns:
                    columns.append(key)
        params_cell = json.dumps(clean_value(params), sort_keys=True)
        metadata_cell = json.dumps(clean_value(metadata), sort_keys=True)
        buffer = io.StringIO()
        writer = csv.writer(buffer, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(columns + ["params", "metadata"])
        for record in records:
            writer.writerow([format_cell(record.get(key)) for key in columns] + [params_cell, metadata_cell])
        return buffer.getvalue()

    def write(self, records: List[Dict[str, Any]], params: Dict[str, Any], metadata: Dict[str, Any],
              fmt: str = "json", output: Optional[str] = None, stamp: bool = False) -> Dict[str, Any]:
        """
        Render an artifact and write it to `output`, or standard output when None.

        Args:
        records (List[Dict]): Result rows.
        params (Dict): Resolved parameters echoed into the artifact.
        metadata (Dict): Run metadata; volatile keys are dropped unless `stamp`.
        fmt (str): 'json' or 'csv'.
        output (str): Destination path.
        stamp (bool): Keep the wall-clock timestamp.

        Returns:
        Dict[str, Any]: Destination and status, in the shape of a tool result.
        """
        metadata = self.prepare_metadata(metadata, stamp)
        if fmt == "json":
            text = self.render_json(records, params, metadata)
        elif fmt == "csv":
            text = self.render_csv(records, params, metadata)
        else:
            raise InvalidParameterError("--format", "must be json or csv")

        if output is None:
            stream = self.stdout or sys.stdout
            stream.write(text)
            stream.flush()
            return {"path": "<stdout>", "status": "success"}

        try:
            directory = os.path.dirname(os.path.abspath(output))
            os.makedirs(directory, exist_ok=True)
            with open(output, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
        except OSError as exc:
            raise InvalidParameterError("--output", f"cannot write {output}: {exc.strerror}") from None
        self.written.append(output)
        return {"path": output, "status": "success"}
