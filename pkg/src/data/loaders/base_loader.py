"""Base loader interface."""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Generic, TypeVar, Union

from loguru import logger

from ...exceptions import DataFormatError

T = TypeVar("T")


class BaseLoader(ABC, Generic[T]):
    """Abstract base class for file loaders.

    ``load`` resolves and checks the path; subclasses implement ``_parse``.
    """

    kind: str = "file"

    def load(self, source: Union[str, Path]) -> T:
        """Load data from source.

        Args:
            source: Path of the file to read

        Returns:
            Parsed data

        Raises:
            DataFormatError: If the file is missing or malformed
        """
        path = Path(source)
        if not path.is_file():
            raise DataFormatError(f"{self.kind} not found: {path}")
        result = self._parse(path)
        logger.bind(component="ingest").debug("loaded {} from {}", self.kind, path)
        return result

    @abstractmethod
    def _parse(self, path: Path) -> T:
        """Parse an existing file."""
