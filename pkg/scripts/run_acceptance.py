#!/usr/bin/env python3
"""Run the acceptance gate; the summary lists one PASS/FAIL line per criterion."""
import sys
from pathlib import Path

import pytest

root = Path(__file__).resolve().parents[1]
sys.exit(pytest.main([str(root / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]))
