"""Repository for EvaluationRun model."""
from typing import List

from sqlalchemy.orm import Session

from ..models import EvaluationRun
from .base_repository import BaseRepository


class EvaluationRepository(BaseRepository[EvaluationRun]):
    """Repository for EvaluationRun operations."""

    def __init__(self, session: Session):
        super().__init__(EvaluationRun, session)

    def get_by_verdicts(self, verdicts_path: str) -> List[EvaluationRun]:
        """Reports computed from one verdict file, newest first."""
        return self.find([EvaluationRun.created_at.desc(), EvaluationRun.id.desc()], verdicts_path=verdicts_path)
