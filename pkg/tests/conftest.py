import pytest

from fixrt.procapi import default_registry
from fixrt.semantics import ResourceLimits
from fixrt.store import Blob, Repository


@pytest.fixture
def repo():
    return Repository()


@pytest.fixture
def registry():
    return default_registry()


@pytest.fixture
def rlimit(repo):
    """A generous resource-limit blob handle."""
    return repo.put(Blob(ResourceLimits().to_blob()))
