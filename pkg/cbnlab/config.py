"""Process-wide runtime settings for cbnlab"""

from typing import Optional

import torch


class Config:
    """Runtime settings resolved from the environment"""

    def __init__(self):
        self._threads: Optional[int] = None
        self._seed: Optional[int] = None
        self._load_from_env()

    def _load_from_env(self):
        """Load settings from environment variables"""
        from .env_config import get_default_seed, get_thread_cap

        self._threads = get_thread_cap()
        self._seed = get_default_seed()

    @property
    def threads(self) -> Optional[int]:
        """Thread cap for intra-op parallelism, None means torch's default"""
        return self._threads

    @property
    def seed_override(self) -> Optional[int]:
        return self._seed

    def set_threads(self, threads: Optional[int]):
        """Set the thread cap and apply it to torch"""
        self._threads = threads
        self.apply()

    def apply(self):
        if self._threads:
            torch.set_num_threads(self._threads)


# Global config instance
_config = Config()


def get_config() -> Config:
    """Get global configuration instance"""
    return _config
