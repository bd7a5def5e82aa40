"""On-disk cache of per-container executable listings and aggregate counts.

Each container gets one ``binaries.json`` under its identifier path:

    <root>/quay.io/biocontainers/samtools/binaries.json

holding ``{"identifier": ..., "executables": {name: absolute path}}``.
Aggregating the cache yields ``counts.json``: for every executable
basename, the number of containers that ship it. A name present twice on
one container's PATH still counts once; the counts measure cross-container
commonness, not occurrences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

from ._fsio import atomic_write_text
from .errors import (
    CorruptListing,
    InvalidIdentifier,
    InvariantViolation,
    ParseFailure,
)
from .identifiers import ContainerIdentifier
from .inspector import ExecutableListing

LISTING_FILENAME = "binaries.json"
COUNTS_FILENAME = "counts.json"


@dataclass(frozen=True)
class FrequencyTable:
    """Executable basename -> number of containers shipping it."""

    counts: Mapping[str, int] = field(default_factory=dict)
    total_containers: int = 0

    def __post_init__(self):
        if self.total_containers < 0:
            raise InvariantViolation("negative container total")
        for name, count in self.counts.items():
            if not isinstance(count, int) or isinstance(count, bool):
                raise InvariantViolation(f"count for {name!r} is not an integer")
            if count < 1:
                raise InvariantViolation(f"count for {name!r} is below 1")
            if count > self.total_containers:
                raise InvariantViolation(
                    f"count for {name!r} exceeds the container total "
                    f"({count} > {self.total_containers})"
                )
        object.__setattr__(self, "counts", dict(sorted(self.counts.items())))

    def count(self, name: str) -> int:
        """Frequency of a name; unknown names count as zero."""
        return self.counts.get(name, 0)


@dataclass
class CacheStore:
    """Filesystem layout for listings, one document per container."""

    root: Path

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def listing_path(self, identifier: ContainerIdentifier) -> Path:
        return self.root / str(identifier) / LISTING_FILENAME

    def has_listing(self, identifier: ContainerIdentifier) -> bool:
        return self.listing_path(identifier).is_file()

    def identifiers(self) -> list[ContainerIdentifier]:
        """All containers with a stored listing, in sorted order."""
        found = []
        if not self.root.is_dir():
            return found
        for path in sorted(self.root.rglob(LISTING_FILENAME)):
            relative = path.parent.relative_to(self.root)
            found.append(ContainerIdentifier.parse(relative.as_posix()))
        return found


def store_listing(cache: CacheStore, listing: ExecutableListing) -> Path:
    """Write a listing document; re-storing the same container overwrites."""
    path = cache.listing_path(listing.identifier)
    document = {
        "identifier": str(listing.identifier),
        "executables": dict(sorted(listing.executables.items())),
    }
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def load_listing(cache: CacheStore, identifier: ContainerIdentifier) -> ExecutableListing:
    path = cache.listing_path(identifier)
    return _read_listing(path)


def _read_listing(path: Path) -> ExecutableListing:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CorruptListing(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or "identifier" not in payload or "executables" not in payload:
        raise CorruptListing(f"{path}: missing identifier/executables fields")
    executables = payload["executables"]
    if not isinstance(executables, dict):
        raise CorruptListing(f"{path}: executables is not an object")
    try:
        identifier = ContainerIdentifier.parse(payload["identifier"])
        return ExecutableListing(identifier=identifier, executables=executables)
    except (ValueError, TypeError, InvalidIdentifier) as exc:
        raise CorruptListing(f"{path}: {exc}") from exc


def build_counts(cache: CacheStore) -> FrequencyTable:
    """Aggregate all stored listings into a frequency table.

    Each container contributes one count per distinct basename. The result
    does not depend on traversal order.
    """
    counts: dict[str, int] = {}
    total = 0
    if cache.root.is_dir():
        for path in sorted(cache.root.rglob(LISTING_FILENAME)):
            listing = _read_listing(path)
            total += 1
            for name in listing.names():
                counts[name] = counts.get(name, 0) + 1
    return FrequencyTable(counts=counts, total_containers=total)


def write_counts(table: FrequencyTable, path: Union[str, Path]) -> Path:
    """Serialize a frequency table, names sorted, newline-terminated."""
    path = Path(path)
    document = {
        "total_containers": table.total_containers,
        "counts": dict(sorted(table.counts.items())),
    }
    atomic_write_text(path, json.dumps(document, indent=2) + "\n")
    return path


def load_counts(path: Union[str, Path]) -> FrequencyTable:
    """Parse and validate a counts document."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseFailure(f"{path}: {exc}") from exc
    if not text.strip():
        raise ParseFailure(f"{path}: empty document")
    try:
        payload = json.loads(text)
    except ValueError as exc:
        raise ParseFailure(f"{path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ParseFailure(f"{path}: expected an object")
    total = payload.get("total_containers")
    counts = payload.get("counts")
    if not isinstance(total, int) or isinstance(total, bool) or not isinstance(counts, dict):
        raise ParseFailure(f"{path}: missing total_containers/counts fields")
    return FrequencyTable(counts=counts, total_containers=total)
