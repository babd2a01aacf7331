"""
Configuration provider implementation
"""
from typing import Dict, Any
import os
from dotenv import load_dotenv

from app.core.interfaces import ConfigProvider

# Load environment variables
load_dotenv()

# Top-level run keys that may be overridden as SPOTTER_<KEY>
RUN_OVERRIDE_KEYS = ("seed", "iterations", "output_dir", "precision", "batch_size", "lr")
STRING_KEYS = ("output_dir", "precision")


def _parse(value: str) -> Any:
    try:
        if any(c in value for c in ".eE"):
            return float(value)
        return int(value)
    except ValueError:
        return value


class EnvironmentConfigProvider(ConfigProvider):
    """Run overrides read from prefixed environment variables"""

    def __init__(self, prefix: str = "SPOTTER_"):
        self.prefix = prefix

    def run_overrides(self) -> Dict[str, Any]:
        """Run config keys set through prefixed environment variables"""
        overrides = {}
        for key in RUN_OVERRIDE_KEYS:
            value = os.getenv(f"{self.prefix}{key.upper()}")
            if value is None:
                continue
            overrides[key] = value if key in STRING_KEYS else _parse(value)
        return overrides
