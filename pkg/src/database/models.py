"""SQLAlchemy ORM models for the run registry."""
from datetime import datetime

from sqlalchemy import JSON, Column, DateTime, Float, Index, Integer, String, Text
from sqlalchemy.ext.declarative import declarative_base

Base = declarative_base()


class ModelVersion(Base):
    """One offline update attempt (or the initial training) of a bundle."""

    __tablename__ = "model_versions"

    id = Column(Integer, primary_key=True)
    run_id = Column(String(64), nullable=False, index=True)
    version = Column(Integer, nullable=False)
    trigger_reason = Column(String(32))  # initial, mass, t_max
    instance_index = Column(Integer)
    status = Column(String(16), nullable=False)  # succeeded, failed
    message = Column(Text)
    mu_t = Column(Float)
    bootstrap_threshold = Column(Float)
    created_at = Column(DateTime, default=datetime.utcnow)

    __table_args__ = (Index("idx_model_versions_run", "run_id", "version"),)

    def to_dict(self):
        """Convert to dictionary."""
        return {
            "id": self.id,
            "run_id": self.run_id,
            "version": self.version,
            "trigger_reason": self.trigger_reason,
            "instance_index": self.instance_index,
            "status": self.status,
            "message": self.message,
            "mu_t": self.mu_t,
            "bootstrap_threshold": self.bootstrap_threshold,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }


class EvaluationRun(Base):
    """Stored evaluation report."""

    __tablename__ = "evaluation_runs"

    id = Column(Integer, primary_key=True)
    verdicts_path = Column(Text, nullable=False)
    window = Column(Integer, nullable=False)
    aucroc = Column(Float)
    aucpr = Column(Float)
    fpr = Column(Float)
    fnr = Column(Float)
    report_json = Column(JSON)
    created_at = Column(DateTime, default=datetime.utcnow, index=True)

    def to_dict(self):
        """Convert to dictionary."""
        return {
            "id": self.id,
            "verdicts_path": self.verdicts_path,
            "window": self.window,
            "aucroc": self.aucroc,
            "aucpr": self.aucpr,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "report_json": self.report_json,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }
