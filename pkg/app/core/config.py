from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional

class Settings(BaseSettings):
    PROJECT_NAME: str = "Collusion Bounds"

    # Results store (sweep rows). Postgres works too: postgresql+psycopg2://user:pw@host/db
    DATABASE_URL: Optional[str] = None
    SQLITE_PATH: str = "./collusion.db"

    # Experiment protocol defaults (delta=0.05, eps=0, N=1e6, N_test=1e5, n_e=2000)
    DELTA: float = 0.05
    EPSILON: float = 0.0
    N: int = 1_000_000
    N_TEST: int = 100_000
    NE: int = 2_000

    # Generator
    BASE_ROWS: int = 3_000_000
    SEED: int = 0
    CHUNK_SIZE: int = 500_000

    # Parallelism cap for generator chunks and sweep cells
    COLLUSION_THREADS: int = 1

    LOG_LEVEL: str = "INFO"
    API_PORT: int = 8005

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    def __init__(self, **data):
        super().__init__(**data)
        if not self.DATABASE_URL:
            self.DATABASE_URL = f"sqlite:///{self.SQLITE_PATH}"

settings = Settings()
