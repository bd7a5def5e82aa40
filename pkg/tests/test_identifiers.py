import pytest

from module_forge.errors import InvalidIdentifier
from module_forge.identifiers import ContainerIdentifier


def test_parse_canonical():
    ident = ContainerIdentifier.parse("quay.io/biocontainers/samtools")
    assert ident.registry_host == "quay.io"
    assert ident.namespace == "biocontainers"
    assert ident.repository == "samtools"


def test_round_trip_is_identity():
    for raw in (
        "quay.io/biocontainers/samtools",
        "ghcr.io/org/team/tool",
        "127.0.0.1:5000/ns/repo",
        "registry.example.com/a/b-c/d_e",
    ):
        assert str(ContainerIdentifier.parse(raw)) == raw


def test_namespace_may_span_segments():
    ident = ContainerIdentifier.parse("ghcr.io/org/team/tool")
    assert ident.namespace == "org/team"
    assert ident.repository == "tool"
    assert ident.path == "org/team/tool"


def test_host_port_allowed_but_tag_suffix_rejected():
    ContainerIdentifier.parse("localhost:5000/ns/repo")
    with pytest.raises(InvalidIdentifier):
        ContainerIdentifier.parse("quay.io/biocontainers/samtools:1.9")


@pytest.mark.parametrize(
    "raw",
    [
        "",
        "samtools",
        "biocontainers/samtools",
        "Quay.io/biocontainers/samtools",
        "quay.io/BioContainers/samtools",
        "quay.io/biocontainers/samtools@sha256:abc",
        "quay.io//samtools",
        "quay.io/bio containers/samtools",
    ],
)
def test_invalid_forms_rejected(raw):
    with pytest.raises(InvalidIdentifier):
        ContainerIdentifier.parse(raw)
