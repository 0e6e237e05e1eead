"""Shared fixtures: bundled data files and one full simulated pipeline run.

The demo pipeline run is expensive enough (a few seconds) that CLI and
end-to-end tests share a single session-scoped workspace.  Tests must treat
that workspace as read-only; anything that rebuilds stages works on a copy.
"""
import time

import pytest

from adxmeter import data_path
from adxmeter.cli import main as cli_main
from adxmeter.detect import AdxRuleset
from adxmeter.taxonomy import Taxonomy
from adxmeter.textprep import GreedyDictTokenizer, load_dictionary


@pytest.fixture(scope="session")
def ruleset():
    return AdxRuleset.load(data_path("ruleset.jsonl"))


@pytest.fixture(scope="session")
def taxonomy():
    return Taxonomy.load(data_path("taxonomy.jsonl"))


@pytest.fixture(scope="session")
def taxonomy_keywords(taxonomy):
    return {c.name: list(c.keywords) for c in taxonomy.categories}


@pytest.fixture(scope="session")
def tokenizer():
    return GreedyDictTokenizer(load_dictionary(data_path("dictionary.txt")))


@pytest.fixture(scope="session")
def demo_scenario():
    return data_path("scenario_demo.json")


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """Full `simulate` over the bundled demo scenario, timed.

    Returns the workspace root and the wall-clock seconds the run took.
    """
    workspace = tmp_path_factory.mktemp("demo") / "workspace"
    started = time.perf_counter()
    code = cli_main(["simulate", "-w", str(workspace)])
    elapsed = time.perf_counter() - started
    assert code == 0, "demo simulate run failed"
    return {"workspace": workspace, "elapsed": elapsed}
