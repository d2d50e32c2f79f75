import json
from pathlib import Path

import pytest

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())


@pytest.fixture(scope="session")
def oracle():
    """Frozen high-precision reference values (see oracles/build_oracles.py)."""
    return ORACLES
