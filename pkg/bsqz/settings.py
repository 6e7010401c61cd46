from __future__ import annotations

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="BSQZ_", env_file=".env", extra="ignore")

    OUT: str = "out"
    THREADS: int = 1
    LOG_LEVEL: str = "INFO"
    LOAD_TOLERANCE: float = 1e-3

    def log_level(self) -> str:
        s = (self.LOG_LEVEL or "").strip().upper()
        return s if s in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"} else "INFO"


settings = Settings()
