"""
Runtime Configuration
Process-wide settings read from the environment (.env supported)
"""

import os
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

# Raise on NaN/Inf after every differentiable op
DIFFMATH_DEBUG = os.getenv("DIFFMATH_DEBUG", "false").lower() in ("1", "true", "yes")

# Inference
DEFAULT_SCORE_THRESHOLD = float(os.getenv("DEFAULT_SCORE_THRESHOLD", "0.4"))

# Output locations
DEFAULT_OUTPUT_DIR = os.getenv("SPOTTER_OUTPUT_DIR", "runs")
METRICS_FILENAME = "metrics.jsonl"
CHECKPOINT_PREFIX = "checkpoint"
RESULTS_FILENAME = "results.json"
RUN_MANIFEST_FILENAME = "run.json"

# Retry budgets
MAX_SCENE_RETRIES = int(os.getenv("MAX_SCENE_RETRIES", "200"))
MAX_CROP_RETRIES = int(os.getenv("MAX_CROP_RETRIES", "30"))
