"""Application configuration"""
from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    """Application settings"""

    # Application
    APP_NAME: str = "FourierSR Lab"
    APP_VERSION: str = "1.0.0"

    # Numerics
    PRECISION: str = "double"  # single or double

    # Equivalence verification
    VERIFY_SEEDS: int = 100
    VERIFY_TOLERANCE_DOUBLE: float = 1e-10
    VERIFY_TOLERANCE_SINGLE: float = 1e-4
    CONTROL_THRESHOLD: float = 0.1  # rel diff the FFT-removed pipeline must exceed

    # Gradient checks
    GRAD_CHECK_EPS: float = 1e-5

    # Benchmarks
    BENCH_WARMUP: int = 3
    BENCH_REPEATS: int = 5

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    LOG_JSON: bool = False

    class Config:
        case_sensitive = True
        env_prefix = "FSR_"
        env_file = ".env"
        extra = "ignore"


settings = Settings()
