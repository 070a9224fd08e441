"""
Database initialization script.
Run this to create all tables.
"""
from typing import Optional

from sqlalchemy.engine import Engine

from app.db.models import Base
import logging

logger = logging.getLogger(__name__)


def init_db(engine: Optional[Engine] = None) -> None:
    """Create all database tables."""
    if engine is None:
        from app.db.session import engine
    logger.info("Creating database tables...")
    Base.metadata.create_all(bind=engine)
    logger.info("Database tables created successfully!")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    init_db()
