import json
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from layerforge.assets import AssetCatalog, make_procedural_assets

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def assets_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("assets")
    make_procedural_assets(root, seed=0)
    return root


@pytest.fixture(scope="session")
def catalog(assets_dir):
    return AssetCatalog.load(assets_dir)


@pytest.fixture
def golden():
    def load(name):
        return json.loads((TESTS / "golden" / f"{name}.json").read_text())

    return load


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
