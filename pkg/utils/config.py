import logging
import os
from typing import Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tuning.sampler import Strategy
from utils.errors import ConfigurationError

load_dotenv()

ENV_PREFIX = "KNOBTUNE_"
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


class Settings(BaseModel):
    """Runtime defaults; KNOBTUNE_* environment variables override them, CLI flags override both."""
    model_config = ConfigDict(frozen=True, extra="ignore")

    host: str = "127.0.0.1"
    port: int = Field(default=7341, ge=0, le=65535)
    n_rounds: int = Field(default=12, ge=2)
    init_rounds: Optional[int] = Field(default=None, ge=1)
    strategy: Strategy = Strategy.hybrid
    delta: float = Field(default=0.10, gt=0, lt=1)
    consecutive: int = Field(default=2, ge=1)
    timeout_intervals: int = Field(default=10, ge=1)
    poll_seconds: float = Field(default=0.2, gt=0)
    log_level: str = "INFO"
    workers: int = Field(default=4, ge=1)

    @classmethod
    def from_env(cls, environ: Optional[Dict[str, str]] = None) -> "Settings":
        environ = os.environ if environ is None else environ
        values = {
            key[len(ENV_PREFIX):].lower(): value
            for key, value in environ.items()
            if key.startswith(ENV_PREFIX) and value != ""
        }
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            err = e.errors()[0]
            name = ENV_PREFIX + ".".join(str(p) for p in err["loc"]).upper()
            raise ConfigurationError(f"{name}: {err['msg']}") from None


def setup_logging(level: str = "INFO") -> None:
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ConfigurationError(f"unknown log level '{level}'")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
