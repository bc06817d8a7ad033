"""Rewrite the golden files under tests/golden/ from the current implementation."""
import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from golden_cases import ASSET_CASES, PURE_CASES  # noqa: E402

from layerforge.assets import AssetCatalog, make_procedural_assets  # noqa: E402


def main():
    out = ROOT / "tests" / "golden"
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        make_procedural_assets(tmp, seed=0)
        assets = AssetCatalog.load(tmp)
        results = {name: fn() for name, fn in PURE_CASES.items()}
        results.update({name: fn(assets) for name, fn in ASSET_CASES.items()})
    for name, data in results.items():
        (out / f"{name}.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        print(out / f"{name}.json")


if __name__ == "__main__":
    main()
