"""
Environment-driven settings for gwldp.

Values come from the process environment, optionally seeded from a .env
file in the working directory.
"""

import os
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()


class Settings(BaseModel):
    """Runtime settings read from GWLDP_* variables"""
    threads: int = Field(default=1, ge=1)
    debug_level: str = "BASIC"
    debug_log_to_file: bool = False
    retry_budget: int = Field(default=10_000_000, ge=1)
    enumeration_budget: int = Field(default=10_000_000, ge=1)
    ledger_path: Optional[str] = None

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            threads=int(os.getenv("GWLDP_THREADS", "1")),
            debug_level=os.getenv("GWLDP_DEBUG_LEVEL", "BASIC"),
            debug_log_to_file=os.getenv("GWLDP_DEBUG_LOG", "false").lower() == "true",
            retry_budget=int(os.getenv("GWLDP_RETRY_BUDGET", "10000000")),
            enumeration_budget=int(os.getenv("GWLDP_ENUM_BUDGET", "10000000")),
            ledger_path=os.getenv("GWLDP_LEDGER") or None,
        )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get the process-wide settings"""
    return Settings.from_env()


def worker_count() -> int:
    """Worker count for block-parallel runners; re-read on every call so
    GWLDP_THREADS can be changed between runs in one process."""
    value = os.getenv("GWLDP_THREADS")
    if value is None:
        return get_settings().threads
    return max(1, int(value))
