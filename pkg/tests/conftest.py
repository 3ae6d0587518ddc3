import importlib.resources as resources

import pytest

from pevplan import caseio


@pytest.fixture(scope="session")
def toy_bundle():
    root = resources.files("pevplan") / "data" / "fig3_toy"
    return caseio.load_bundle(root / "bundle.json")


@pytest.fixture(scope="session")
def toy_inputs(toy_bundle):
    return toy_bundle.inputs
