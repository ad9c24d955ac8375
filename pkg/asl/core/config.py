from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    DEBUG: bool = False
    ARTIFACT_VERSION: str = "0.1.0"

    # Monte Carlo
    DEFAULT_SEED: int = 20200504
    DEFAULT_WORKERS: int = 1
    OBSERVATION_CHUNK: int = 256
    TRACE_RUNS: int = 5

    # Numerics
    PERRON_TOLERANCE: float = 1e-12
    PERRON_MAX_ITER: int = 100_000
    STOCHASTIC_TOL: float = 1e-10
    QUAD_ABS_TOL: float = 1e-10
    SERIES_TRUNCATION_TOL: float = 1e-12

    # Experiment rules
    RECOVERY_WINDOW: int = 50
    BURN_IN_FLOOR: int = 100
    BURN_IN_TOLERANCE: float = 1e-9
    MIN_MOMENT_SAMPLES: int = 30
    MIN_DECISION_SAMPLES: int = 100
    MIN_NORMALITY_SAMPLES: int = 100

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "allow"

settings = Settings()
