import os
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
ADULT_DIR = Path(os.environ.get("FCRL_ADULT_DIR", ROOT / "data" / "adult"))

needs_adult = pytest.mark.skipif(
    not (ADULT_DIR / "adult.data").exists(), reason="UCI Adult raw files not found; set FCRL_ADULT_DIR"
)
