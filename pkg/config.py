"""
Configuration module for AnosovLab.

This module loads configuration settings from environment variables
and provides default values when environment variables are not set.
Scenario files (groups, generators, forms) are handled by scenario.py;
the values here are process-wide defaults that scenario [run] sections
and command-line flags may override.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file if it exists
load_dotenv()

# Base paths
BASE_DIR = Path(__file__).resolve().parent
RESULTS_DIR = Path(os.getenv("RESULTS_DIR", BASE_DIR / "results"))
RESULTS_DIR.mkdir(parents=True, exist_ok=True)
SCENARIOS_DIR = BASE_DIR / "scenarios"

# Word enumeration
BALL_BUDGET = int(os.getenv("BALL_BUDGET", 5_000_000))
RENORMALIZE_EVERY = int(os.getenv("RENORMALIZE_EVERY", 8))
DEFAULT_BALL_LENGTH = int(os.getenv("DEFAULT_BALL_LENGTH", 8))

# Reproducibility and parallelism
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", 0))
DEFAULT_WORKERS = int(os.getenv("DEFAULT_WORKERS", 1))

# Limit set sampling
DEDUPE_EPS = float(os.getenv("DEDUPE_EPS", 1e-4))
MAX_SAMPLE = int(os.getenv("MAX_SAMPLE", 3000))
MAX_SQUARINGS = int(os.getenv("MAX_SQUARINGS", 64))

# Patterson-Sullivan checks
SHADOW_RADIUS = float(os.getenv("SHADOW_RADIUS", 2.0))
PS_EXPONENT_MARGIN = float(os.getenv("PS_EXPONENT_MARGIN", 1.05))
AHLFORS_BAND = float(os.getenv("AHLFORS_BAND", 50.0))
SHADOW_BAND = float(os.getenv("SHADOW_BAND", 100.0))

# Reporting settings
GENERATE_CHARTS = os.getenv("GENERATE_CHARTS", "true").lower() == "true"
VERBOSE_OUTPUT = os.getenv("VERBOSE_OUTPUT", "true").lower() == "true"
SCHEMA_VERSION = "1.0"

# Logging settings
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = BASE_DIR / "logs" / "anosovlab.log"
Path(LOG_FILE).parent.mkdir(exist_ok=True)
