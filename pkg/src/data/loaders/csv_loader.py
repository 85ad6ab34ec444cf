"""CSV stream loader and writer.

Files are comma-separated UTF-8 with a header row. An optional sidecar
``<file>.meta.json`` carries stream metadata (drift markers, synthetic flag).
"""
import json
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ...exceptions import DataFormatError
from ..streams import LabeledStream
from .base_loader import BaseLoader

CONCEPT_COLUMN = "concept"


def metadata_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


class CsvStreamLoader(BaseLoader[LabeledStream]):
    """Loads a labelled stream from CSV.

    Args:
        feature_columns: Columns to use as features; all remaining columns when omitted
        label_column: Optional 0/1 ground-truth column
        require_labels: Fail when ``label_column`` is absent instead of loading without labels
    """

    kind = "CSV file"

    def __init__(
        self,
        feature_columns: Optional[Sequence[str]] = None,
        label_column: Optional[str] = None,
        require_labels: bool = True,
    ):
        self.feature_columns = list(feature_columns) if feature_columns else None
        self.label_column = label_column
        self.require_labels = require_labels

    def _parse(self, path: Path) -> LabeledStream:
        frame = self._read(path)
        has_labels = self.label_column is not None and (self.require_labels or self.label_column in frame.columns)
        features = self._feature_columns(frame, has_labels)
        instances = self._numeric(frame, features)

        labels = None
        if has_labels:
            label_values = self._numeric(frame, [self.label_column])[:, 0]
            bad = np.flatnonzero((label_values != 0) & (label_values != 1))
            if bad.size:
                raise DataFormatError("Labels must be 0 or 1", row=int(bad[0]) + 1, column=self.label_column)
            labels = label_values.astype(np.int64)

        concepts = None
        if CONCEPT_COLUMN in frame.columns and CONCEPT_COLUMN not in features:
            concepts = self._numeric(frame, [CONCEPT_COLUMN])[:, 0].astype(np.int64)

        meta = self._read_metadata(path)
        return LabeledStream(
            instances=instances,
            labels=labels,
            name=meta.get("name", path.stem),
            drift_markers=tuple(meta.get("drift_markers", ())),
            concepts=concepts,
            synthetic=bool(meta.get("synthetic", False)),
            extra={k: v for k, v in meta.items() if k not in ("name", "drift_markers", "synthetic", "n", "d")},
        )

    def _read(self, path: Path) -> pd.DataFrame:
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True)
        except pd.errors.EmptyDataError as e:
            raise DataFormatError(f"CSV file is empty: {path}") from e
        except pd.errors.ParserError as e:
            raise DataFormatError(f"Ragged or malformed CSV {path}: {e}") from e
        if frame.empty:
            raise DataFormatError(f"CSV file has no data rows: {path}")
        return frame

    def _feature_columns(self, frame: pd.DataFrame, has_labels: bool) -> List[str]:
        reserved = {self.label_column, CONCEPT_COLUMN}
        columns = self.feature_columns or [c for c in frame.columns if c not in reserved]
        wanted = columns + ([self.label_column] if has_labels else [])
        missing = [c for c in wanted if c not in frame.columns]
        if missing:
            raise DataFormatError(f"Missing columns: {', '.join(missing)}")
        if not columns:
            raise DataFormatError("No feature columns")
        return columns

    @staticmethod
    def _numeric(frame: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
        out = np.empty((len(frame), len(columns)), dtype=np.float64)
        for j, column in enumerate(columns):
            raw = frame[column]
            values = pd.to_numeric(raw, errors="coerce")
            bad = np.flatnonzero(values.isna().to_numpy() | ~np.isfinite(values.to_numpy(dtype=np.float64)))
            if bad.size:
                row = int(bad[0])
                cell = raw.iloc[row]
                missing = pd.isna(cell) or cell == ""
                problem = "Missing value (ragged row?)" if missing else f"Non-numeric value '{cell}'"
                raise DataFormatError(problem, row=row + 1, column=column)
            out[:, j] = values.to_numpy(dtype=np.float64)
        return out

    @staticmethod
    def _read_metadata(path: Path) -> dict:
        meta = metadata_path(path)
        if not meta.exists():
            return {}
        try:
            return json.loads(meta.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"Malformed metadata file {meta}: {e}") from e


def write_stream_csv(stream: LabeledStream, path: Union[str, Path], label_column: str = "label") -> Path:
    """Write a stream as CSV (features ``x0..x{d-1}``, label, concept) plus its metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(stream.instances, columns=[f"x{i}" for i in range(stream.d)])
    if stream.labels is not None:
        frame[label_column] = stream.labels
    if stream.concepts is not None:
        frame[CONCEPT_COLUMN] = stream.concepts
    frame.to_csv(path, index=False, float_format="%.17g")
    metadata_path(path).write_text(json.dumps(stream.meta, indent=2), encoding="utf-8")
    return path
