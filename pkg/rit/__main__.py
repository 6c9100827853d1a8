"""Allow running the pipeline as ``python -m rit``."""

import sys

from .main import run

sys.exit(run())
