"""Registry entries: the ``container.yaml`` model and its lifecycle.

An entry pins everything needed to install one container as a module: the
source image, human metadata, the tag-to-digest map, the designated default
version, and the alias commands. Serialization is canonical (fixed key
order, two-space indent, version-sorted tags) so that automated refreshes
produce minimal diffs under version control.

Entries live at ``<registry root>/<identifier>/container.yaml``;
``export_static_api`` mirrors the whole registry into JSON documents that
can be served as static files.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import yaml

from ._fsio import atomic_write_text
from .aliases import AliasSet
from .errors import NoTags, ParseFailure, SchemaViolation
from .identifiers import ContainerIdentifier
from .tags import TagOrdering, tag_sort_key

logger = logging.getLogger(__name__)

ENTRY_FILENAME = "container.yaml"
LIBRARY_FILENAME = "library.json"
ENTRY_EXPORT_FILENAME = "container.json"

_DIGEST_RE = re.compile(r"^sha256:[0-9a-f]{64}$")

_REQUIRED_FIELDS = ("docker", "url", "maintainer", "description", "latest", "tags", "aliases")
_ALL_FIELDS = _REQUIRED_FIELDS + ("filter",)


@dataclass(frozen=True)
class RegistryEntry:
    """One container's registry document."""

    docker: str
    url: str
    maintainer: str
    description: str
    latest: Mapping[str, str]
    tags: Mapping[str, str]
    aliases: Mapping[str, str] = field(default_factory=dict)
    filter: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        ContainerIdentifier.parse(self.docker)
        for tag, digest in self.tags.items():
            if not tag or not isinstance(tag, str):
                raise ValueError(f"bad tag key: {tag!r}")
            if not _DIGEST_RE.match(digest):
                raise ValueError(f"malformed digest for tag {tag!r}: {digest!r}")
        if len(self.latest) != 1:
            raise ValueError("latest must hold exactly one tag")
        latest_tag, latest_digest = next(iter(self.latest.items()))
        if self.tags.get(latest_tag) != latest_digest:
            raise ValueError(f"latest tag {latest_tag!r} is not in tags with the same digest")
        AliasSet(aliases=dict(self.aliases))
        object.__setattr__(self, "latest", {latest_tag: latest_digest})
        object.__setattr__(
            self, "tags", {t: self.tags[t] for t in sorted(self.tags, key=tag_sort_key)}
        )
        object.__setattr__(self, "aliases", dict(sorted(self.aliases.items())))
        if self.filter is not None:
            object.__setattr__(self, "filter", tuple(self.filter))

    @property
    def identifier(self) -> ContainerIdentifier:
        return ContainerIdentifier.parse(self.docker)

    @property
    def latest_tag(self) -> str:
        return next(iter(self.latest))


@dataclass(frozen=True)
class EntryDelta:
    """What changed between an entry and its refreshed successor."""

    added_tags: tuple[str, ...] = ()
    removed_tags: tuple[str, ...] = ()
    digest_changes: Mapping[str, tuple[str, str]] = field(default_factory=dict)
    latest_change: Optional[tuple[str, str]] = None

    def is_empty(self) -> bool:
        return not (self.added_tags or self.removed_tags or self.digest_changes or self.latest_change)

    def lines(self) -> list[str]:
        """One human-readable line per change."""
        out = [f"+{tag}" for tag in self.added_tags]
        out += [f"-{tag}" for tag in self.removed_tags]
        out += [f"~{tag} {old} -> {new}" for tag, (old, new) in self.digest_changes.items()]
        if self.latest_change:
            out.append(f"latest {self.latest_change[0]} -> {self.latest_change[1]}")
        return out


def _pick_latest(ordering: TagOrdering, digests: Mapping[str, str]) -> str:
    if ordering.latest and ordering.latest.raw in digests:
        return ordering.latest.raw
    fallback = max(digests)
    logger.warning("no version-parseable tag; falling back to %r as latest", fallback)
    return fallback


def build_entry(
    identifier: ContainerIdentifier,
    ordering: TagOrdering,
    digests: Mapping[str, str],
    aliases: AliasSet,
    description: str,
    url: str,
    maintainer: str,
    filter: Optional[tuple[str, ...]] = None,
) -> RegistryEntry:
    """Assemble a fresh entry from pipeline outputs.

    ``digests`` maps every kept tag to its manifest digest. When no tag
    parses as a version, the lexicographically greatest tag becomes the
    default, with a warning.
    """
    if not digests:
        raise NoTags(f"no tagged digests for {identifier}")
    latest_tag = _pick_latest(ordering, digests)
    return RegistryEntry(
        docker=str(identifier),
        url=url,
        maintainer=maintainer,
        description=description,
        latest={latest_tag: digests[latest_tag]},
        tags=dict(digests),
        aliases=dict(aliases.aliases),
        filter=filter,
    )


def update_entry(
    existing: RegistryEntry, ordering: TagOrdering, digests: Mapping[str, str]
) -> tuple[RegistryEntry, EntryDelta]:
    """Replace an entry's tag data with fresh registry truth.

    Aliases and human metadata are preserved untouched; removed upstream
    tags are dropped, and the default version is recomputed. The returned
    delta describes every difference.
    """
    if not digests:
        raise NoTags(f"no tagged digests for {existing.docker}")
    latest_tag = _pick_latest(ordering, digests)
    updated = RegistryEntry(
        docker=existing.docker,
        url=existing.url,
        maintainer=existing.maintainer,
        description=existing.description,
        latest={latest_tag: digests[latest_tag]},
        tags=dict(digests),
        aliases=dict(existing.aliases),
        filter=existing.filter,
    )
    old_tags, new_tags = set(existing.tags), set(digests)
    added = tuple(sorted(new_tags - old_tags, key=tag_sort_key))
    removed = tuple(sorted(old_tags - new_tags, key=tag_sort_key))
    changes = {
        tag: (existing.tags[tag], digests[tag])
        for tag in sorted(old_tags & new_tags, key=tag_sort_key)
        if existing.tags[tag] != digests[tag]
    }
    latest_change = None
    if existing.latest_tag != updated.latest_tag:
        latest_change = (existing.latest_tag, updated.latest_tag)
    delta = EntryDelta(
        added_tags=added,
        removed_tags=removed,
        digest_changes=changes,
        latest_change=latest_change,
    )
    return updated, delta


# -- serialization -----------------------------------------------------------


def serialize_entry(entry: RegistryEntry) -> str:
    """Render the canonical YAML form of an entry."""
    document = {
        "docker": entry.docker,
        "url": entry.url,
        "maintainer": entry.maintainer,
        "description": entry.description,
        "latest": dict(entry.latest),
        "tags": dict(entry.tags),
        "aliases": dict(entry.aliases),
    }
    if entry.filter is not None:
        document["filter"] = list(entry.filter)
    return yaml.safe_dump(
        document,
        sort_keys=False,
        default_flow_style=False,
        indent=2,
        width=1_000_000,
        allow_unicode=True,
    )


def parse_entry(text: str) -> RegistryEntry:
    """Parse entry YAML, validating the schema and every model invariant."""
    try:
        payload = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseFailure(f"invalid YAML: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaViolation("entry document must be a mapping")
    missing = [name for name in _REQUIRED_FIELDS if name not in payload]
    if missing:
        raise SchemaViolation(f"missing fields: {', '.join(missing)}")
    extra = [name for name in payload if name not in _ALL_FIELDS]
    if extra:
        raise SchemaViolation(f"unknown fields: {', '.join(sorted(extra))}")
    for name in ("docker", "url", "maintainer", "description"):
        if not isinstance(payload[name], str):
            raise SchemaViolation(f"field {name!r} must be a string")
    latest = _string_map(payload["latest"], "latest")
    tags = _string_map(payload["tags"], "tags")
    aliases = _string_map(payload["aliases"], "aliases")
    filter_value = payload.get("filter")
    if filter_value is not None:
        if not isinstance(filter_value, list) or not all(isinstance(p, str) for p in filter_value):
            raise SchemaViolation("field 'filter' must be a list of patterns")
        filter_value = tuple(filter_value)
    try:
        return RegistryEntry(
            docker=payload["docker"],
            url=payload["url"],
            maintainer=payload["maintainer"],
            description=payload["description"],
            latest=latest,
            tags=tags,
            aliases=aliases,
            filter=filter_value,
        )
    except Exception as exc:
        raise SchemaViolation(str(exc)) from exc


def _string_map(value, name: str) -> dict[str, str]:
    if not isinstance(value, dict):
        raise SchemaViolation(f"field {name!r} must be a mapping")
    out = {}
    for key, item in value.items():
        # A hand-written entry may leave numeric-looking tags unquoted;
        # coerce scalar keys back to their string form.
        if isinstance(key, (int, float)):
            key = str(key)
        if not isinstance(key, str) or not isinstance(item, str):
            raise SchemaViolation(f"field {name!r} must map strings to strings")
        out[key] = item
    return out


# -- registry directory ------------------------------------------------------


def entry_path(registry_root: Union[str, Path], identifier: ContainerIdentifier) -> Path:
    return Path(registry_root) / str(identifier) / ENTRY_FILENAME


def write_entry(registry_root: Union[str, Path], entry: RegistryEntry) -> Path:
    path = entry_path(registry_root, entry.identifier)
    atomic_write_text(path, serialize_entry(entry))
    return path


def load_entry(path: Union[str, Path]) -> RegistryEntry:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseFailure(f"{path}: {exc}") from exc
    try:
        return parse_entry(text)
    except (ParseFailure, SchemaViolation) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def list_entries(registry_root: Union[str, Path]) -> list[tuple[ContainerIdentifier, Path]]:
    """Every entry file under the registry root, sorted by identifier."""
    root = Path(registry_root)
    found = []
    if not root.is_dir():
        return found
    for path in sorted(root.rglob(ENTRY_FILENAME)):
        relative = path.parent.relative_to(root)
        found.append((ContainerIdentifier.parse(relative.as_posix()), path))
    return found


def export_static_api(registry_root: Union[str, Path], output_dir: Union[str, Path]) -> Path:
    """Mirror the registry into a directory of static JSON documents.

    Produces ``library.json`` (every identifier with its default version)
    plus one ``container.json`` per entry under the identifier path. Output
    bytes are deterministic for unchanged input.
    """
    output_dir = Path(output_dir)
    library = []
    for identifier, path in list_entries(registry_root):
        entry = load_entry(path)
        library.append({"name": entry.docker, "latest": entry.latest_tag})
        document = {
            "docker": entry.docker,
            "url": entry.url,
            "maintainer": entry.maintainer,
            "description": entry.description,
            "latest": dict(entry.latest),
            "tags": dict(entry.tags),
            "aliases": dict(entry.aliases),
        }
        if entry.filter is not None:
            document["filter"] = list(entry.filter)
        target = output_dir / entry.docker / ENTRY_EXPORT_FILENAME
        atomic_write_text(target, json.dumps(document, indent=2, sort_keys=True) + "\n")
    library.sort(key=lambda item: item["name"])
    atomic_write_text(
        output_dir / LIBRARY_FILENAME, json.dumps(library, indent=2, sort_keys=True) + "\n"
    )
    return output_dir
