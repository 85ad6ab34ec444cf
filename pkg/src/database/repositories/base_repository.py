"""Base repository shared by the run registry tables."""
from typing import Any, Generic, List, Optional, Sequence, Type, TypeVar

from sqlalchemy.orm import Query, Session

T = TypeVar("T")


class BaseRepository(Generic[T]):
    """Append-only access to one registry table.

    Registry rows are never updated or deleted; a run's history is rebuilt by
    filtering on its key columns.
    """

    def __init__(self, model: Type[T], session: Session):
        self.model = model
        self.session = session

    def find(self, order_by: Sequence[Any] = (), **criteria: Any) -> List[T]:
        """Rows whose columns equal ``criteria``, ordered by ``order_by`` then id."""
        return self._query(order_by, **criteria).all()

    def first(self, order_by: Sequence[Any] = (), **criteria: Any) -> Optional[T]:
        return self._query(order_by, **criteria).first()

    def get_all(self, limit: int = 100, offset: int = 0) -> List[T]:
        """Get all rows with pagination, oldest first."""
        return self._query(()).limit(limit).offset(offset).all()

    def insert(self, entity: T) -> T:
        """Add a row and flush so its id is assigned."""
        self.session.add(entity)
        self.session.flush()
        return entity

    def _query(self, order_by: Sequence[Any], **criteria: Any) -> Query:
        query = self.session.query(self.model).filter_by(**criteria)
        return query.order_by(*order_by, self.model.id)
