import json
import random

import pytest

from module_forge.cache import (
    CacheStore,
    FrequencyTable,
    build_counts,
    load_counts,
    load_listing,
    store_listing,
    write_counts,
)
from module_forge.errors import (
    CorruptListing,
    InvalidIdentifier,
    InvariantViolation,
    ParseFailure,
)
from module_forge.identifiers import ContainerIdentifier
from module_forge.inspector import ExecutableListing


def listing_for(name, executables):
    ident = ContainerIdentifier.parse(f"quay.io/biocontainers/{name}")
    return ExecutableListing(
        identifier=ident,
        executables={n: f"/usr/local/bin/{n}" for n in executables},
    )


def brute_force_recount(root):
    """Independent oracle: reread every stored document and tally presence."""
    counts = {}
    files = sorted(root.rglob("binaries.json"))
    for path in files:
        payload = json.loads(path.read_text())
        for name in set(payload["executables"]):
            counts[name] = counts.get(name, 0) + 1
    return counts, len(files)


# -- store/load --------------------------------------------------------------


def test_store_layout_follows_identifier(tmp_path):
    cache = CacheStore(tmp_path)
    listing = listing_for("samtools", ["samtools"])
    path = store_listing(cache, listing)
    assert path == tmp_path / "quay.io/biocontainers/samtools/binaries.json"
    assert path.is_file()


def test_round_trip_identity(tmp_path):
    cache = CacheStore(tmp_path)
    listing = listing_for("samtools", ["samtools", "wgsim"])
    store_listing(cache, listing)
    assert load_listing(cache, listing.identifier) == listing


def test_listing_document_schema(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("samtools", ["samtools"]))
    text = (tmp_path / "quay.io/biocontainers/samtools/binaries.json").read_text()
    assert text.endswith("\n")
    payload = json.loads(text)
    assert payload == {
        "identifier": "quay.io/biocontainers/samtools",
        "executables": {"samtools": "/usr/local/bin/samtools"},
    }


def test_store_twice_overwrites(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("samtools", ["old"]))
    store_listing(cache, listing_for("samtools", ["new"]))
    loaded = load_listing(cache, listing_for("samtools", []).identifier)
    assert set(loaded.executables) == {"new"}
    files = list(tmp_path.rglob("binaries.json"))
    assert len(files) == 1


def test_uppercase_identifier_rejected_at_parse():
    with pytest.raises(InvalidIdentifier):
        ContainerIdentifier.parse("quay.io/BioContainers/samtools")


# -- build_counts ------------------------------------------------------------


def test_counts_hand_checked(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("one", ["python3", "samtools"]))
    store_listing(cache, listing_for("two", ["python3"]))
    table = build_counts(cache)
    assert table.counts == {"python3": 2, "samtools": 1}
    assert table.total_containers == 2


def test_counts_empty_cache(tmp_path):
    table = build_counts(CacheStore(tmp_path))
    assert table.counts == {}
    assert table.total_containers == 0


def test_counts_match_brute_force_on_random_cache(tmp_path):
    rng = random.Random(42)
    pool = [f"tool{i}" for i in range(40)]
    cache = CacheStore(tmp_path)
    for index in range(50):
        names = rng.sample(pool, rng.randint(1, 12))
        store_listing(cache, listing_for(f"c{index:02d}", names))
    table = build_counts(cache)
    expected_counts, expected_total = brute_force_recount(tmp_path)
    assert table.counts == expected_counts
    assert table.total_containers == expected_total == 50


def test_counts_invariant_under_insertion_order(tmp_path):
    rng = random.Random(7)
    pool = [f"tool{i}" for i in range(20)]
    listings = [
        listing_for(f"c{i}", rng.sample(pool, rng.randint(1, 8))) for i in range(12)
    ]
    forward = CacheStore(tmp_path / "fwd")
    backward = CacheStore(tmp_path / "bwd")
    for listing in listings:
        store_listing(forward, listing)
    for listing in reversed(listings):
        store_listing(backward, listing)
    assert build_counts(forward) == build_counts(backward)


def test_incremental_consistency(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("one", ["a", "b"]))
    before = build_counts(cache)
    store_listing(cache, listing_for("two", ["b", "c", "d"]))
    after = build_counts(cache)
    assert after.total_containers == before.total_containers + 1
    assert after.count("b") == before.count("b") + 1
    assert after.count("c") == 1 and after.count("d") == 1
    assert after.count("a") == before.count("a")


def test_corrupt_listing_names_file(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("good", ["x"]))
    bad = tmp_path / "quay.io/biocontainers/bad/binaries.json"
    bad.parent.mkdir(parents=True)
    bad.write_text("{not json")
    with pytest.raises(CorruptListing) as excinfo:
        build_counts(cache)
    assert "bad/binaries.json" in str(excinfo.value)


# -- counts file -------------------------------------------------------------


def test_counts_file_round_trip(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("one", ["b", "a"]))
    table = build_counts(cache)
    path = write_counts(table, tmp_path / "counts.json")
    assert load_counts(path) == table
    payload = json.loads(path.read_text())
    assert list(payload) == ["total_containers", "counts"]
    assert list(payload["counts"]) == sorted(payload["counts"])
    assert path.read_text().endswith("\n")


def test_counts_exceeding_total_rejected(tmp_path):
    path = tmp_path / "counts.json"
    path.write_text(json.dumps({"total_containers": 2, "counts": {"x": 5}}))
    with pytest.raises(InvariantViolation):
        load_counts(path)


def test_empty_counts_document_rejected(tmp_path):
    path = tmp_path / "counts.json"
    path.write_text("")
    with pytest.raises(ParseFailure):
        load_counts(path)


def test_zero_count_rejected():
    with pytest.raises(InvariantViolation):
        FrequencyTable(counts={"x": 0}, total_containers=3)


def test_unknown_name_counts_zero():
    table = FrequencyTable(counts={"x": 1}, total_containers=1)
    assert table.count("y") == 0


def test_concurrent_stores_of_distinct_containers(tmp_path):
    import concurrent.futures

    cache = CacheStore(tmp_path)
    listings = [listing_for(f"par{i:02d}", [f"tool{i}", "shared"]) for i in range(20)]
    with concurrent.futures.ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda l: store_listing(cache, l), listings))
    table = build_counts(cache)
    assert table.total_containers == 20
    assert table.count("shared") == 20
    assert len(cache.identifiers()) == 20


def test_no_temp_files_left_behind(tmp_path):
    cache = CacheStore(tmp_path)
    store_listing(cache, listing_for("clean", ["x"]))
    strays = [p for p in tmp_path.rglob("*") if p.name.startswith(".tmp-")]
    assert strays == []
