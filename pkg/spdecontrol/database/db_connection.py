from typing import AsyncIterator

from sqlalchemy.ext.asyncio import AsyncEngine, AsyncSession, create_async_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from spdecontrol.config import DB_ECHO


Base = declarative_base()


def get_engine(database_url: str, echo: bool = DB_ECHO) -> AsyncEngine:
    """
    Creates an asynchronous SQLAlchemy engine for the ensemble record store.

    Args:
        database_url (str): The URL for connecting to the database.
        echo (bool): Log every statement; DB_ECHO in the environment by default.

    Returns:
        AsyncEngine: The created asynchronous engine.
    """
    return create_async_engine(database_url, echo=echo)


def get_session_factory(engine: AsyncEngine) -> sessionmaker:
    return sessionmaker(bind=engine, expire_on_commit=False, class_=AsyncSession)


async def create_schema(engine: AsyncEngine) -> None:
    """Create the record tables if they do not exist yet."""
    async with engine.begin() as conn:
        await conn.run_sync(Base.metadata.create_all)


async def get_db(database_url: str) -> AsyncIterator[AsyncSession]:
    """
    Asynchronous generator for obtaining a database session.

    Creates the schema on first use, then yields one session; the session and
    the engine are closed after use.

    Yields:
        AsyncSession: The active database session.
    """
    engine = get_engine(database_url)
    try:
        await create_schema(engine)
        async with get_session_factory(engine)() as session:
            yield session
    finally:
        await engine.dispose()
