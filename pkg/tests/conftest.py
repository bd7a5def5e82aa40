from __future__ import annotations

from pathlib import Path

import pytest

from module_forge.identifiers import ContainerIdentifier
from module_forge.registry_client import RegistryClient, RetryPolicy
from module_forge.testing import MockRegistry, seed_samtools, SAMTOOLS_REPO

DATA_DIR = Path(__file__).parent / "data"

SAMTOOLS_ID = f"quay.io/{SAMTOOLS_REPO}"


@pytest.fixture
def registry():
    with MockRegistry() as reg:
        yield reg


@pytest.fixture
def samtools_registry():
    """A started mock registry pre-seeded with the samtools fixture."""
    with MockRegistry() as reg:
        seed_samtools(reg)
        yield reg


@pytest.fixture
def samtools_identifier() -> ContainerIdentifier:
    return ContainerIdentifier.parse(SAMTOOLS_ID)


def make_client(reg: MockRegistry, **kwargs) -> RegistryClient:
    """Client routed at the mock, with instant retries."""
    kwargs.setdefault("endpoints", {"quay.io": reg.url})
    kwargs.setdefault("retry", RetryPolicy(attempts=3, initial_delay=0.0))
    kwargs.setdefault("sleep", lambda _: None)
    return RegistryClient(**kwargs)


@pytest.fixture
def client(samtools_registry):
    with make_client(samtools_registry) as c:
        yield c
