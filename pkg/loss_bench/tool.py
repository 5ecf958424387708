import hashlib
import json
import pathlib
from importlib import resources

import pandas as pd

from .errors import ScenarioError

BUNDLED_PACKAGE = "loss_bench.scenario.bundled"


def bundled_scenarios() -> dict:
    """Names and paths of the scenario files shipped with the package."""
    folder = resources.files(BUNDLED_PACKAGE)
    return {
        entry.name[: -len(".json")]: entry
        for entry in sorted(folder.iterdir(), key=lambda e: e.name)
        if entry.name.endswith(".json")
    }


def load_scenario_document(path: pathlib.Path | str) -> dict:
    """
    Read a scenario document from a JSON file, from scenario.json inside a
    directory, or from the bundled scenario of that name.
    """
    document = None
    source = pathlib.Path(path)
    scenario_json = source / "scenario.json" if source.is_dir() else source
    if scenario_json.exists():
        try:
            document = json.loads(scenario_json.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ScenarioError(f"could not parse {scenario_json}: {e}", ["/"])
    else:
        bundled = bundled_scenarios()
        name = source.stem if source.suffix == ".json" else str(path)
        if name in bundled:
            document = json.loads(bundled[name].read_text())
    if document is None:
        raise ScenarioError(f"could not load scenario from {path}")
    if not isinstance(document, dict):
        raise ScenarioError("scenario document must be a JSON object", ["/"])
    return document


def load_returns(path: pathlib.Path | str) -> pd.DataFrame:
    """Return series as columns of a CSV file, with or without a header row."""
    path = pathlib.Path(path)
    frame = pd.read_csv(path)
    try:
        frame.columns.astype(float)
    except (TypeError, ValueError):
        return frame
    # every header cell parses as a number: the file has no header row
    return pd.read_csv(path, header=None)


def canonical_json(document) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def fingerprint(document) -> str:
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()
