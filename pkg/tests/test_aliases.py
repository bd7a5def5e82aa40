import logging
import random

import pytest

from module_forge.aliases import (
    AliasSet,
    name_matches_identifier,
    rank,
    select_aliases,
    verbatim_aliases,
)
from module_forge.cache import FrequencyTable
from module_forge.identifiers import ContainerIdentifier
from module_forge.inspector import ExecutableListing

SAMTOOLS = ContainerIdentifier.parse("quay.io/biocontainers/samtools")


def listing_of(identifier, names):
    return ExecutableListing(
        identifier=identifier,
        executables={n: f"/usr/local/bin/{n}" for n in names},
    )


def table_of(counts, total=10000):
    return FrequencyTable(counts=counts, total_containers=total)


def naive_selection(identifier, executable_names, counts, rare_max=10, extra_cap=25, common_max=1000):
    """Independent reimplementation of the selection rules, kept deliberately naive.

    Build the per-container count set, rank it ascending, then apply the
    three inclusion rules with plain loops.
    """
    per_container = {name: counts.get(name, 0) for name in executable_names}
    ranked = sorted(per_container, key=lambda n: (per_container[n], n))

    def flatten(text):
        return "".join(ch for ch in text.lower() if ch.isalnum())

    repo = flatten(identifier.repository)
    keep = set()
    for name in ranked:
        if per_container[name] < rare_max:
            keep.add(name)
    for name in ranked:
        flat = flatten(name)
        if flat and repo and (repo in flat or flat in repo):
            keep.add(name)
    added = 0
    for name in ranked:
        if name in keep:
            continue
        if added == extra_cap:
            break
        if per_container[name] < common_max:
            keep.add(name)
            added += 1
    return keep


# -- rank ----------------------------------------------------------------------


def test_rank_two_elements():
    ranked = rank(listing_of(SAMTOOLS, ["a", "b"]), table_of({"a": 5, "b": 2}))
    assert [(e.name, e.global_count) for e in ranked] == [("b", 2), ("a", 5)]
    assert ranked[0].path == "/usr/local/bin/b"


def test_rank_missing_name_counts_zero_and_sorts_first():
    ranked = rank(listing_of(SAMTOOLS, ["seen", "unseen"]), table_of({"seen": 3}))
    assert [(e.name, e.global_count) for e in ranked] == [("unseen", 0), ("seen", 3)]


def test_rank_ties_break_by_name():
    ranked = rank(listing_of(SAMTOOLS, ["b", "a"]), table_of({"a": 3, "b": 3}))
    assert [e.name for e in ranked] == ["a", "b"]


# -- name matching ---------------------------------------------------------------


def test_exact_repository_match():
    assert name_matches_identifier("samtools", SAMTOOLS)


def test_unrelated_name_does_not_match():
    assert not name_matches_identifier("perl", SAMTOOLS)


def test_containment_after_stripping_punctuation():
    assert name_matches_identifier("samtools-view", SAMTOOLS)
    assert name_matches_identifier("SAMTOOLS.pl", SAMTOOLS)
    assert name_matches_identifier("sam", SAMTOOLS), "short name inside repo counts"


def test_punctuation_only_name_never_matches():
    assert not name_matches_identifier("-", SAMTOOLS)
    assert not name_matches_identifier("._-", SAMTOOLS)


def test_matching_ignores_the_table():
    # Rule (b) is a pure string predicate; counts play no part.
    for count in (0, 5, 500, 50000):
        table = table_of({"samtools": count} if count else {}, total=100000)
        chosen = select_aliases(SAMTOOLS, listing_of(SAMTOOLS, ["samtools"]), table)
        assert "samtools" in chosen.names()


# -- select_aliases ----------------------------------------------------------------


def test_spec_example_rare_and_match_rules():
    listing = listing_of(SAMTOOLS, ["samtools", "perl", "awk", "bcftools"])
    table = table_of({"samtools": 3, "perl": 5000, "awk": 4800, "bcftools": 7})
    chosen = select_aliases(SAMTOOLS, listing, table)
    assert chosen.names() == {"samtools", "bcftools"}
    expected = naive_selection(
        SAMTOOLS, list(listing.executables), dict(table.counts)
    )
    assert chosen.names() == expected


def test_all_common_no_match_gives_empty_set():
    ident = ContainerIdentifier.parse("quay.io/biocontainers/mypkg")
    listing = listing_of(ident, ["perl", "awk", "python3"])
    table = table_of({"perl": 5000, "awk": 4800, "python3": 7000})
    assert len(select_aliases(ident, listing, table)) == 0


def test_cap_picks_lexicographically_first_on_ties():
    ident = ContainerIdentifier.parse("quay.io/biocontainers/zzz")
    names = [f"tool{i:02d}" for i in range(40)]
    listing = listing_of(ident, names)
    table = table_of({n: 50 for n in names})
    chosen = select_aliases(ident, listing, table)
    assert len(chosen) == 25
    assert sorted(chosen.names()) == sorted(names)[:25]


def test_paths_come_from_listing():
    listing = listing_of(SAMTOOLS, ["samtools"])
    chosen = select_aliases(SAMTOOLS, listing, table_of({}))
    assert chosen.aliases == {"samtools": "/usr/local/bin/samtools"}


def test_empty_listing_warns_and_returns_empty(caplog):
    with caplog.at_level(logging.WARNING):
        chosen = select_aliases(SAMTOOLS, listing_of(SAMTOOLS, []), table_of({}))
    assert len(chosen) == 0
    assert any("empty alias set" in r.message for r in caplog.records)


def test_unsafe_names_dropped_with_warning(caplog):
    listing = ExecutableListing(
        identifier=SAMTOOLS,
        executables={
            "good": "/usr/bin/good",
            "has space": "/usr/bin/has space",
            "module": "/usr/bin/module",
        },
    )
    with caplog.at_level(logging.WARNING):
        chosen = select_aliases(SAMTOOLS, listing, table_of({}))
    assert chosen.names() == {"good"}
    assert sum("shell-unsafe" in r.message for r in caplog.records) == 2


def test_rule_a_monotone_under_count_drops():
    rng = random.Random(3)
    names = [f"n{i}" for i in range(30)]
    counts = {n: rng.randint(0, 2000) for n in names}
    ident = ContainerIdentifier.parse("quay.io/biocontainers/other")
    base = select_aliases(ident, listing_of(ident, names), table_of(counts))
    for name in names:
        lowered = dict(counts)
        lowered[name] = 0
        lowered = {k: v for k, v in lowered.items() if v > 0}
        after = select_aliases(ident, listing_of(ident, names), table_of(lowered))
        assert name in after.names(), "lowering a count never evicts the name"
        assert base.names() <= after.names() | {name} | base.names()


def test_cap_respected_for_rule_c_only():
    ident = ContainerIdentifier.parse("quay.io/biocontainers/mix")
    rare = [f"rare{i:02d}" for i in range(30)]  # all count 1 -> rule (a)
    mid = [f"mid{i:02d}" for i in range(40)]  # count 50 -> rule (c)
    listing = listing_of(ident, rare + mid)
    counts = {n: 1 for n in rare} | {n: 50 for n in mid}
    chosen = select_aliases(ident, listing, table_of(counts))
    assert set(rare) <= chosen.names(), "rule (a) is uncapped"
    assert len(chosen.names() - set(rare)) == 25


def test_thresholds_are_configurable():
    ident = ContainerIdentifier.parse("quay.io/biocontainers/tweak")
    listing = listing_of(ident, ["a", "b", "c"])
    table = table_of({"a": 1, "b": 20, "c": 400})
    strict = select_aliases(ident, listing, table, rare_max=2, extra_cap=1, common_max=30)
    assert strict.names() == {"a", "b"}


def test_oracle_equivalence_randomized():
    rng = random.Random(1234)
    repos = ["samtools", "bwa", "seqkit", "x42"]
    for _ in range(200):
        repo = rng.choice(repos)
        ident = ContainerIdentifier.parse(f"quay.io/biocontainers/{repo}")
        pool = [f"tool{i}" for i in range(60)] + ["samtools", "bwa-mem", "seqkit.py"]
        names = rng.sample(pool, rng.randint(1, 40))
        counts = {n: rng.randint(0, 5000) for n in names if rng.random() > 0.2}
        counts = {k: v for k, v in counts.items() if v > 0}
        listing = listing_of(ident, names)
        table = table_of(counts)
        chosen = select_aliases(ident, listing, table)
        assert chosen.names() == naive_selection(ident, names, counts)


# -- AliasSet / verbatim ------------------------------------------------------


def test_alias_set_rejects_reserved_and_unsafe():
    with pytest.raises(ValueError):
        AliasSet(aliases={"module": "/usr/bin/module"})
    with pytest.raises(ValueError):
        AliasSet(aliases={"ok;rm": "/usr/bin/x"})
    with pytest.raises(ValueError):
        AliasSet(aliases={"ok": "relative/path"})


def test_verbatim_aliases_keeps_safe_names():
    listing = ExecutableListing(
        identifier=SAMTOOLS,
        executables={"samtools": "/usr/local/bin/samtools", "a b": "/usr/bin/a b"},
    )
    assert verbatim_aliases(listing).names() == {"samtools"}
