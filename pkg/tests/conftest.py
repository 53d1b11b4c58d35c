import json
import pathlib
import sys

import pytest

SRC = pathlib.Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from mrsafe import scenario as sc  # noqa: E402


def bundled_doc(name: str) -> dict:
    path = SRC / "mrsafe" / "scenarios" / f"{name}.json"
    return json.loads(path.read_text())


def bundled_spec(name: str, **overrides) -> sc.ScenarioSpec:
    """Load a bundled scenario, optionally patched with dotted overrides."""
    doc = bundled_doc(name)
    if overrides:
        doc = sc.apply_overrides(doc, {k.replace("__", "."): v
                                       for k, v in overrides.items()})
    return sc.parse_scenario(json.dumps(doc))


@pytest.fixture(scope="session")
def scenarios_dir():
    return SRC / "mrsafe" / "scenarios"
