"""Deterministic day-of-month scheduling of entry updates.

Refreshing thousands of entries in one batch does not fit inside a hosted
CI runner, so each container identifier is hashed onto one of 28 groups,
one per day of the month that every month has. The mapping depends only on
the identifier string: new additions never reshuffle existing assignments,
and any machine computes the same groups.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import date
from typing import Sequence

from .errors import DuplicateIdentifier
from .identifiers import ContainerIdentifier

GROUP_COUNT = 28


@dataclass(frozen=True)
class UpdateGroup:
    day: int
    members: tuple[ContainerIdentifier, ...]

    def __post_init__(self):
        if not 1 <= self.day <= GROUP_COUNT:
            raise ValueError(f"day out of range: {self.day}")


def group_of(identifier: ContainerIdentifier) -> int:
    """Day of month (1-28) assigned to an identifier.

    The sha256 hexdigest of the canonical identifier, read as one base-16
    integer, taken modulo 28, shifted to 1-based days.
    """
    digest = hashlib.sha256(str(identifier).encode("utf-8")).hexdigest()
    return int(digest, 16) % GROUP_COUNT + 1


def partition(identifiers: Sequence[ContainerIdentifier]) -> list[UpdateGroup]:
    """Split identifiers into the 28 day groups.

    All 28 groups are returned even when empty; within a group, input order
    is preserved. Duplicate identifiers are refused.
    """
    seen = set()
    buckets: dict[int, list[ContainerIdentifier]] = {day: [] for day in range(1, GROUP_COUNT + 1)}
    for identifier in identifiers:
        key = str(identifier)
        if key in seen:
            raise DuplicateIdentifier(key)
        seen.add(key)
        buckets[group_of(identifier)].append(identifier)
    return [UpdateGroup(day=day, members=tuple(buckets[day])) for day in range(1, GROUP_COUNT + 1)]


def due_on(identifiers: Sequence[ContainerIdentifier], when: date) -> list[ContainerIdentifier]:
    """The identifiers scheduled for a calendar date.

    Days 29-31 exist only in some months, so nothing is ever scheduled
    there; those dates return an empty list.
    """
    if when.day > GROUP_COUNT:
        return []
    return [identifier for identifier in identifiers if group_of(identifier) == when.day]
