"""Repository for ModelVersion model."""
from typing import List, Optional

from sqlalchemy.orm import Session

from ..models import ModelVersion
from .base_repository import BaseRepository


class ModelVersionRepository(BaseRepository[ModelVersion]):
    """Repository for ModelVersion operations."""

    def __init__(self, session: Session):
        super().__init__(ModelVersion, session)

    def get_by_run(self, run_id: str) -> List[ModelVersion]:
        """All attempts of one stream run, oldest first."""
        return self.find(run_id=run_id)

    def get_latest_succeeded(self, run_id: str) -> Optional[ModelVersion]:
        return self.first([ModelVersion.version.desc()], run_id=run_id, status="succeeded")
