"""Run the acceptance criteria and print one PASS/FAIL line per criterion.

Usage: python scripts/run_acceptance.py [-k EXPR]
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    sys.exit(pytest.main([str(root / "tests" / "test_acceptance.py"), "-q", *sys.argv[1:]]))
