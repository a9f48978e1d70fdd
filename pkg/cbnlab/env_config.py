"""Environment configuration utilities"""

import os
from typing import Optional


def get_thread_cap() -> Optional[int]:
    """Get the parallelism cap from CBNLAB_THREADS

    Returns:
        Positive thread count if set and valid, None otherwise
    """
    raw = os.getenv("CBNLAB_THREADS", "").strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        return None
    return value if value > 0 else None


def get_default_seed() -> Optional[int]:
    """Get a root seed override from CBNLAB_SEED"""
    raw = os.getenv("CBNLAB_SEED", "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def load_env_file(env_path: str = ".env") -> bool:
    """Load environment variables from .env file

    Args:
        env_path: Path to .env file (default: .env)

    Returns:
        True if file was loaded, False otherwise
    """
    from dotenv import load_dotenv

    return load_dotenv(env_path)


# Auto-load .env file if it exists
load_env_file()
