"""Database connection management."""
from contextlib import contextmanager
from functools import lru_cache

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from ..exceptions import ConfigError


@lru_cache()
def get_engine(url: str) -> Engine:
    """Engine for ``url``, created once per process."""
    if not url:
        raise ConfigError("registry_url is empty; the run registry is disabled")
    return create_engine(url, pool_pre_ping=True)


@contextmanager
def get_db_session(url: str) -> Session:
    """Get database session context manager."""
    session = sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def init_db(url: str):
    """Initialize database tables."""
    from .models import Base

    Base.metadata.create_all(bind=get_engine(url))
