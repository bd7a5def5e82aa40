"""Selection of meaningful command aliases for one container.

Given everything found on a container's PATH and the cross-container
frequency table, pick the executables worth exposing as shell commands.
The selection favors rarity: a name that appears in few containers is
probably the tool this container exists to provide, while something like
``perl`` or ``python3`` is operating-system noise.

Three rules build the alias set:

  (a) keep every name rarer than ``rare_max`` containers;
  (b) keep every name that textually matches the repository name;
  (c) walking the remaining names from rarest to most common, admit up to
      ``extra_cap`` more, skipping anything at or above ``common_max``.

The default thresholds (10, 25, 1000) were tuned by hand against a large
bioinformatics corpus and stay configurable.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

from .cache import FrequencyTable
from .identifiers import ContainerIdentifier
from .inspector import ExecutableListing

logger = logging.getLogger(__name__)

DEFAULT_RARE_MAX = 10
DEFAULT_EXTRA_CAP = 25
DEFAULT_COMMON_MAX = 1000

# Alias names become shell commands, so only shell-safe command words are
# allowed, and names that would shadow the module system itself are not.
VALID_ALIAS_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._+-]*$")
VALID_PATH_RE = re.compile(r"^/[A-Za-z0-9/._+-]+$")
RESERVED_NAMES = frozenset({"module", "ml"})

_ALNUM_RE = re.compile(r"[^a-z0-9]+")


class RankedEntry(NamedTuple):
    name: str
    path: str
    global_count: int


@dataclass(frozen=True)
class AliasSet:
    """Validated alias name -> absolute executable path mapping."""

    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, path in self.aliases.items():
            if not is_valid_alias_name(name):
                raise ValueError(f"unsafe alias name: {name!r}")
            if not VALID_PATH_RE.match(path):
                raise ValueError(f"unsafe alias path: {path!r}")
        object.__setattr__(self, "aliases", dict(sorted(self.aliases.items())))

    def __len__(self) -> int:
        return len(self.aliases)

    def names(self) -> frozenset[str]:
        return frozenset(self.aliases)


def is_valid_alias_name(name: str) -> bool:
    return bool(VALID_ALIAS_RE.match(name)) and name not in RESERVED_NAMES


def verbatim_aliases(listing: ExecutableListing) -> AliasSet:
    """Turn a whole listing into aliases, dropping shell-unsafe names.

    Used when no frequency table is available to filter with.
    """
    usable = {}
    for name, path in listing.executables.items():
        if is_valid_alias_name(name) and VALID_PATH_RE.match(path):
            usable[name] = path
        else:
            logger.warning("dropping shell-unsafe executable name %r", name)
    return AliasSet(aliases=usable)


def rank(listing: ExecutableListing, table: FrequencyTable) -> list[RankedEntry]:
    """Pair each listed executable with its global count, rarest first.

    Names the table has never seen count as zero. Ties break by name so the
    ranking is deterministic.
    """
    entries = [
        RankedEntry(name=name, path=path, global_count=table.count(name))
        for name, path in listing.executables.items()
    ]
    entries.sort(key=lambda e: (e.global_count, e.name))
    return entries


def name_matches_identifier(name: str, identifier: ContainerIdentifier) -> bool:
    """True when the executable name and the repository name overlap.

    Comparison is case-insensitive and ignores every non-alphanumeric
    character, so ``samtools-view`` matches a repository called
    ``samtools``. Containment runs both ways: a short repo name inside a
    long executable name counts, and vice versa.
    """
    flat_name = _ALNUM_RE.sub("", name.lower())
    flat_repo = _ALNUM_RE.sub("", identifier.repository.lower())
    if not flat_name or not flat_repo:
        return False
    return flat_repo in flat_name or flat_name in flat_repo


def select_aliases(
    identifier: ContainerIdentifier,
    listing: ExecutableListing,
    table: FrequencyTable,
    rare_max: int = DEFAULT_RARE_MAX,
    extra_cap: int = DEFAULT_EXTRA_CAP,
    common_max: int = DEFAULT_COMMON_MAX,
) -> AliasSet:
    """Pick the alias set for one container.

    Applies rules (a) through (c) over the ranked listing; the ``extra_cap``
    limit applies only to rule (c) additions, never to rarity or name-match
    picks. Names that would not survive as shell commands are dropped with
    a warning before the rules run.
    """
    if not listing.executables:
        logger.warning("no executables found for %s; empty alias set", identifier)
        return AliasSet()

    usable = {}
    for name, path in listing.executables.items():
        if is_valid_alias_name(name) and VALID_PATH_RE.match(path):
            usable[name] = path
        else:
            logger.warning("dropping shell-unsafe executable name %r (%s)", name, identifier)
    ranked = rank(
        ExecutableListing(identifier=listing.identifier, executables=usable), table
    )

    chosen: dict[str, str] = {}
    for entry in ranked:
        if entry.global_count < rare_max or name_matches_identifier(entry.name, identifier):
            chosen[entry.name] = entry.path
    extras = 0
    for entry in ranked:
        if extras >= extra_cap:
            break
        if entry.name in chosen:
            continue
        if entry.global_count < common_max:
            chosen[entry.name] = entry.path
            extras += 1
    return AliasSet(aliases=chosen)
