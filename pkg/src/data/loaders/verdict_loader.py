"""NDJSON verdict loader."""
import json
from pathlib import Path
from typing import List

from ...analysis.thresholds import Verdict
from ...exceptions import DataFormatError
from .base_loader import BaseLoader


class VerdictLoader(BaseLoader[List[Verdict]]):
    """Loads the verdict records written by ``driftwatch run``."""

    kind = "Verdict file"

    def _parse(self, path: Path) -> List[Verdict]:
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise DataFormatError(f"Cannot read verdicts {path}: {e}") from e
        verdicts = []
        for row, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"Invalid JSON: {e.msg}", row=row) from e
            try:
                verdicts.append(Verdict.from_record(record))
            except DataFormatError as e:
                raise DataFormatError(str(e), row=row) from e
        return verdicts
