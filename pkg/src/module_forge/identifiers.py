"""Canonical container identifiers.

An identifier is the fully qualified, tag-free name of an image repository:
``host/namespace/repository``, for example ``quay.io/biocontainers/samtools``.
The canonical form is lowercase and carries no tag or digest suffix; it is
the key under which cache documents, registry entries, and update groups are
filed, so parsing and re-serializing it must be the identity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import InvalidIdentifier

# Host may carry a port; path segments follow the usual repository grammar.
_HOST_RE = re.compile(r"^[a-z0-9][a-z0-9.-]*(:[0-9]+)?$")
_SEGMENT_RE = re.compile(r"^[a-z0-9][a-z0-9._-]*$")


@dataclass(frozen=True)
class ContainerIdentifier:
    """A parsed ``host/namespace/repository`` image name."""

    registry_host: str
    namespace: str
    repository: str

    def __post_init__(self):
        if not _HOST_RE.match(self.registry_host):
            raise InvalidIdentifier(f"bad registry host: {self.registry_host!r}")
        for segment in self.namespace.split("/"):
            if not _SEGMENT_RE.match(segment):
                raise InvalidIdentifier(f"bad namespace segment: {segment!r}")
        if not _SEGMENT_RE.match(self.repository):
            raise InvalidIdentifier(f"bad repository name: {self.repository!r}")

    @classmethod
    def parse(cls, raw: str) -> "ContainerIdentifier":
        """Parse a canonical identifier string.

        Rejects anything that is not already canonical: uppercase characters,
        tag (``:tag``) or digest (``@sha256:...``) suffixes, and names with
        fewer than three path segments.
        """
        if not raw:
            raise InvalidIdentifier("empty identifier")
        if raw != raw.lower():
            raise InvalidIdentifier(f"identifier must be lowercase: {raw!r}")
        if "@" in raw:
            raise InvalidIdentifier(f"identifier must not carry a digest: {raw!r}")
        parts = raw.split("/")
        if len(parts) < 3:
            raise InvalidIdentifier(
                f"expected host/namespace/repository, got {raw!r}"
            )
        host, middle, repo = parts[0], "/".join(parts[1:-1]), parts[-1]
        # A colon in the host is a port; anywhere else it is a tag suffix.
        if ":" in repo or ":" in middle:
            raise InvalidIdentifier(f"identifier must not carry a tag: {raw!r}")
        return cls(registry_host=host, namespace=middle, repository=repo)

    @property
    def path(self) -> str:
        """The registry API name, i.e. everything after the host."""
        return f"{self.namespace}/{self.repository}"

    def __str__(self) -> str:
        return f"{self.registry_host}/{self.namespace}/{self.repository}"
