"""Run registry: model version history and evaluation reports in a SQL database."""
import uuid
from typing import Any, Dict, List, Optional

from loguru import logger
from sqlalchemy.exc import SQLAlchemyError

from ..database.connection import get_db_session, init_db
from ..database.models import EvaluationRun, ModelVersion
from ..database.repositories.evaluation_repository import EvaluationRepository
from ..database.repositories.model_version_repository import ModelVersionRepository


class RunRegistry:
    """Records model versions and evaluations. Does nothing when ``url`` is empty.

    Database failures are logged and swallowed; the registry never interrupts scoring.
    """

    def __init__(self, url: str, run_id: Optional[str] = None):
        self.url = url
        self.run_id = run_id or uuid.uuid4().hex
        self.enabled = bool(url)
        if self.enabled:
            try:
                init_db(url)
            except SQLAlchemyError as e:
                logger.bind(component="registry").error("registry disabled, cannot initialise {}: {}", url, e)
                self.enabled = False

    def record_version(
        self,
        version: int,
        status: str,
        trigger_reason: str,
        instance_index: Optional[int] = None,
        message: str = "",
        mu_t: Optional[float] = None,
        bootstrap_threshold: Optional[float] = None,
    ) -> None:
        if not self.enabled:
            return
        try:
            with get_db_session(self.url) as session:
                ModelVersionRepository(session).insert(
                    ModelVersion(
                        run_id=self.run_id,
                        version=version,
                        trigger_reason=trigger_reason,
                        instance_index=instance_index,
                        status=status,
                        message=message or None,
                        mu_t=mu_t,
                        bootstrap_threshold=bootstrap_threshold,
                    )
                )
        except SQLAlchemyError as e:
            logger.bind(component="registry").error("failed to record model version {}: {}", version, e)

    def record_evaluation(self, verdicts_path: str, window: int, report: Dict[str, Any]) -> None:
        if not self.enabled:
            return
        summary = report.get("global", {})
        try:
            with get_db_session(self.url) as session:
                EvaluationRepository(session).insert(
                    EvaluationRun(
                        verdicts_path=verdicts_path,
                        window=window,
                        aucroc=summary.get("aucroc"),
                        aucpr=summary.get("aucpr"),
                        fpr=summary.get("fpr"),
                        fnr=summary.get("fnr"),
                        report_json=report,
                    )
                )
        except SQLAlchemyError as e:
            logger.bind(component="registry").error("failed to record evaluation of {}: {}", verdicts_path, e)

    def versions(self) -> List[Dict[str, Any]]:
        """Version history of this run as dictionaries."""
        if not self.enabled:
            return []
        with get_db_session(self.url) as session:
            return [row.to_dict() for row in ModelVersionRepository(session).get_by_run(self.run_id)]

    def evaluations(self, verdicts_path: str) -> List[Dict[str, Any]]:
        if not self.enabled:
            return []
        with get_db_session(self.url) as session:
            return [row.to_dict() for row in EvaluationRepository(session).get_by_verdicts(verdicts_path)]
