"""Tag parsing, filtering, and version ordering.

Registry tags in the bioinformatics corpus look like ``1.9--h10a08f8_12``:
a dotted numeric core followed by build metadata. The comparator below
gives a strict total order over arbitrary tag strings so the newest
version can be picked as the default install target. Pure functions
throughout.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fnmatch import translate as glob_translate
from typing import Iterable, Optional

from .errors import BadPattern

_VERSION_RE = re.compile(r"^(\d+)(?:\.(\d+))?(?:\.(\d+))?(.*)$", re.DOTALL)
_CHUNK_RE = re.compile(r"(\d+)")


@dataclass(frozen=True)
class TagCandidate:
    """One raw tag plus whatever version structure could be read out of it."""

    raw: str
    version_core: Optional[tuple[int, int, int]] = None
    build_meta: Optional[str] = None
    parseable: bool = False

    def __post_init__(self):
        if self.parseable != (self.version_core is not None):
            raise ValueError("parseable flag must track version_core presence")


@dataclass(frozen=True)
class TagOrdering:
    """Candidates sorted oldest to newest, plus the chosen default version."""

    ordered: tuple[TagCandidate, ...]
    latest: Optional[TagCandidate] = None


def parse_tag(raw: str) -> TagCandidate:
    """Read the leading dotted numeric version out of a tag.

    One to three numeric components are accepted (missing ones count as
    zero); whatever follows the core is kept verbatim as build metadata.
    Tags that do not start with a digit ("latest", "dev") are unparseable,
    which is a valid outcome, not an error.
    """
    if not raw:
        raise ValueError("empty tag")
    match = _VERSION_RE.match(raw)
    if not match:
        return TagCandidate(raw=raw)
    major, minor, patch, rest = match.groups()
    core = (int(major), int(minor or 0), int(patch or 0))
    return TagCandidate(raw=raw, version_core=core, build_meta=rest or None, parseable=True)


def filter_tags(tags, exclusions: Iterable[str] = ()) -> list[TagCandidate]:
    """Drop the literal "latest" tag and anything matching an exclusion glob.

    "latest" is re-derived from the version order rather than trusted.
    Patterns are anchored globs; an uncompilable pattern raises BadPattern.
    """
    compiled = []
    for pattern in exclusions:
        if not pattern:
            raise BadPattern("empty exclusion pattern")
        translated = glob_translate(pattern)
        # fnmatch silently renders an impossible class like [z-a] as a
        # never-matching regex; surface that as an error instead.
        if "(?!)" in translated:
            raise BadPattern(f"impossible character range in pattern {pattern!r}")
        try:
            compiled.append(re.compile(translated))
        except re.error as exc:
            raise BadPattern(f"bad exclusion pattern {pattern!r}: {exc}") from exc
    kept = []
    for raw in tags.tags:
        if raw == "latest":
            continue
        if any(rx.match(raw) for rx in compiled):
            continue
        kept.append(parse_tag(raw))
    return kept


def natural_key(text: str) -> tuple:
    """Key under which numeric runs compare numerically: h_2 < h_10."""
    key = []
    for chunk in _CHUNK_RE.split(text):
        if not chunk:
            continue
        if chunk.isdigit():
            key.append((0, int(chunk), ""))
        else:
            key.append((1, 0, chunk))
    return tuple(key)


def candidate_sort_key(candidate: TagCandidate) -> tuple:
    """Total-order key: version core, then natural build metadata, then raw.

    Parseable candidates order before unparseable ones; two distinct tags
    never compare equal because the raw string is the final tiebreak.
    """
    if candidate.parseable:
        return (0, candidate.version_core, natural_key(candidate.build_meta or ""), candidate.raw)
    return (1, (0, 0, 0), (), candidate.raw)


def tag_sort_key(raw: str) -> tuple:
    """Convenience comparator key for raw tag strings."""
    return candidate_sort_key(parse_tag(raw))


def sort_and_select(candidates: Iterable[TagCandidate]) -> TagOrdering:
    """Order candidates oldest to newest and pick the default version.

    The default ("latest") is the maximum parseable candidate; it is absent
    when nothing parses, since a moving label like "dev" makes a poor pin.
    """
    ordered = tuple(sorted(candidates, key=candidate_sort_key))
    parseable = [c for c in ordered if c.parseable]
    latest = parseable[-1] if parseable else None
    return TagOrdering(ordered=ordered, latest=latest)
