import random
import tarfile
import io

import pytest
from hypothesis import given, strategies as st

from module_forge.errors import MalformedArchive, PathTraversal
from module_forge.identifiers import ContainerIdentifier
from module_forge.inspector import (
    BaseSet,
    DEFAULT_PATH,
    ExecutableListing,
    PathDirs,
    bundled_base_sets,
    diff_against_bases,
    enumerate_executables,
    extract_path_dirs,
    load_base_set,
    unpack_layers,
)
from module_forge.registry_client import ImageConfig
from module_forge.testing import make_layer

IDENT = ContainerIdentifier.parse("quay.io/biocontainers/samtools")


def write_layer(tmp_path, index, **kwargs):
    path = tmp_path / f"layer{index}.tar.gz"
    path.write_bytes(make_layer(**kwargs))
    return path


# -- extract_path_dirs -------------------------------------------------------


def test_path_split():
    config = ImageConfig(env=("PATH=/opt/x/bin:/usr/bin",))
    assert extract_path_dirs(config).dirs == ("/opt/x/bin", "/usr/bin")


def test_path_default_when_absent():
    assert extract_path_dirs(ImageConfig(env=())).dirs == tuple(DEFAULT_PATH.split(":"))
    assert len(extract_path_dirs(ImageConfig(env=())).dirs) == 6


def test_last_path_entry_wins():
    config = ImageConfig(env=("PATH=/a", "PATH=/b"))
    assert extract_path_dirs(config).dirs == ("/b",)


def test_relative_path_entries_dropped():
    config = ImageConfig(env=("PATH=/bin:relative:/sbin",))
    assert extract_path_dirs(config).dirs == ("/bin", "/sbin")


# -- unpack_layers -----------------------------------------------------------


def test_whiteout_removes_shadowed_file(tmp_path):
    layer1 = write_layer(tmp_path, 1, files={"/bin/a": (b"a", 0o755), "/bin/b": (b"b", 0o755)})
    layer2 = write_layer(tmp_path, 2, whiteouts=("/bin/a",))
    tree = unpack_layers([layer1, layer2], tmp_path / "root")
    assert not (tree / "bin/a").exists()
    assert (tree / "bin/b").is_file()


def test_whiteout_removes_directory(tmp_path):
    layer1 = write_layer(tmp_path, 1, files={"/opt/pkg/tool": (b"t", 0o755)})
    layer2 = write_layer(tmp_path, 2, whiteouts=("/opt/pkg",))
    tree = unpack_layers([layer1, layer2], tmp_path / "root")
    assert not (tree / "opt/pkg").exists()


def test_opaque_whiteout_clears_lower_contents(tmp_path):
    layer1 = write_layer(
        tmp_path, 1,
        files={"/data/old1": b"1", "/data/old2": b"2", "/elsewhere/kept": b"k"},
    )
    layer2 = write_layer(tmp_path, 2, files={"/data/new": b"n"}, opaque_dirs=("/data",))
    tree = unpack_layers([layer1, layer2], tmp_path / "root")
    assert sorted(p.name for p in (tree / "data").iterdir()) == ["new"]
    assert (tree / "elsewhere/kept").is_file()


def test_exec_bit_preserved(tmp_path):
    layer = write_layer(tmp_path, 1, files={"/usr/bin/tool": (b"#!", 0o755)})
    tree = unpack_layers([layer], tmp_path / "root")
    assert (tree / "usr/bin/tool").stat().st_mode & 0o755 == 0o755


def test_last_writer_wins_on_conflict(tmp_path):
    layer1 = write_layer(tmp_path, 1, files={"/bin/t": (b"one", 0o755)})
    layer2 = write_layer(tmp_path, 2, files={"/bin/t": (b"two", 0o644)})
    tree = unpack_layers([layer1, layer2], tmp_path / "root")
    assert (tree / "bin/t").read_bytes() == b"two"
    assert not (tree / "bin/t").stat().st_mode & 0o111

    tree_rev = unpack_layers([layer2, layer1], tmp_path / "root-rev")
    assert (tree_rev / "bin/t").read_bytes() == b"one"


def test_disjoint_layers_order_independent(tmp_path):
    layer1 = write_layer(tmp_path, 1, files={"/bin/a": (b"a", 0o755)})
    layer2 = write_layer(tmp_path, 2, files={"/sbin/b": (b"b", 0o755)})
    tree1 = unpack_layers([layer1, layer2], tmp_path / "r1")
    tree2 = unpack_layers([layer2, layer1], tmp_path / "r2")
    snapshot = lambda t: sorted(str(p.relative_to(t)) for p in t.rglob("*"))
    assert snapshot(tree1) == snapshot(tree2)


def test_path_traversal_entry_rejected(tmp_path):
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w") as tar:
        info = tarfile.TarInfo("../../etc/passwd")
        payload = b"pwned"
        info.size = len(payload)
        tar.addfile(info, io.BytesIO(payload))
    archive = tmp_path / "evil.tar"
    archive.write_bytes(buffer.getvalue())
    with pytest.raises(PathTraversal):
        unpack_layers([archive], tmp_path / "root")
    assert not (tmp_path / "etc/passwd").exists()


def test_symlinked_parent_cannot_escape(tmp_path):
    outside = tmp_path / "outside"
    outside.mkdir()
    layer1 = write_layer(tmp_path, 1, symlinks={"/escape": str(outside)})
    layer2 = write_layer(tmp_path, 2, files={"/escape/boom": b"x"})
    with pytest.raises(PathTraversal):
        unpack_layers([layer1, layer2], tmp_path / "root")
    assert not (outside / "boom").exists()


def test_malformed_archive(tmp_path):
    bogus = tmp_path / "bogus.tar.gz"
    bogus.write_bytes(b"this is not a tar archive")
    with pytest.raises(MalformedArchive):
        unpack_layers([bogus], tmp_path / "root")


def test_uncompressed_tar_accepted(tmp_path):
    raw = make_layer(files={"/bin/t": (b"x", 0o755)}, compress=False)
    archive = tmp_path / "plain.tar"
    archive.write_bytes(raw)
    tree = unpack_layers([archive], tmp_path / "root")
    assert (tree / "bin/t").is_file()


def test_hard_links_become_independent_files(tmp_path):
    layer = write_layer(
        tmp_path, 1,
        files={"/bin/orig": (b"same", 0o755)},
        hardlinks={"/bin/linked": "/bin/orig"},
    )
    tree = unpack_layers([layer], tmp_path / "root")
    assert (tree / "bin/linked").read_bytes() == b"same"
    (tree / "bin/orig").write_bytes(b"changed")
    assert (tree / "bin/linked").read_bytes() == b"same"


# -- enumerate_executables ---------------------------------------------------


def unpacked_tree(tmp_path, **kwargs):
    layer = write_layer(tmp_path, random.randrange(10**6), **kwargs)
    return unpack_layers([layer], tmp_path / f"root-{layer.stem}")


def test_enumerates_executable_on_path(tmp_path):
    tree = unpacked_tree(tmp_path, files={"/usr/local/bin/samtools": (b"#!", 0o755)})
    listing = enumerate_executables(tree, PathDirs(("/usr/local/bin",)), IDENT)
    assert listing.executables == {"samtools": "/usr/local/bin/samtools"}


def test_non_executable_mode_excluded(tmp_path):
    tree = unpacked_tree(tmp_path, files={"/usr/bin/readme": (b"text", 0o644)})
    listing = enumerate_executables(tree, PathDirs(("/usr/bin",)), IDENT)
    assert len(listing) == 0


def test_first_path_occurrence_wins(tmp_path):
    tree = unpacked_tree(
        tmp_path,
        files={
            "/usr/local/bin/tool": (b"local", 0o755),
            "/usr/bin/tool": (b"system", 0o755),
        },
    )
    listing = enumerate_executables(tree, PathDirs(("/usr/local/bin", "/usr/bin")), IDENT)
    assert listing.executables["tool"] == "/usr/local/bin/tool"


def test_directories_and_missing_dirs_skipped(tmp_path):
    tree = unpacked_tree(tmp_path, files={"/usr/bin/sub/x": (b"x", 0o755)})
    listing = enumerate_executables(tree, PathDirs(("/usr/bin", "/nonexistent")), IDENT)
    assert len(listing) == 0, "directories themselves are not executables"


def test_symlink_resolving_inside_tree_counts(tmp_path):
    tree = unpacked_tree(
        tmp_path,
        files={"/opt/real/tool-1.0": (b"#!", 0o755)},
        symlinks={"/usr/bin/tool": "/opt/real/tool-1.0", "/usr/bin/rel": "../../opt/real/tool-1.0"},
    )
    listing = enumerate_executables(tree, PathDirs(("/usr/bin",)), IDENT)
    assert listing.executables == {
        "rel": "/usr/bin/rel",
        "tool": "/usr/bin/tool",
    }


def test_dangling_and_outside_symlinks_skipped(tmp_path):
    tree = unpacked_tree(
        tmp_path,
        files={"/usr/bin/ok": (b"#!", 0o755)},
        symlinks={"/usr/bin/dangling": "/no/such/file", "/usr/bin/loop": "/usr/bin/loop"},
    )
    listing = enumerate_executables(tree, PathDirs(("/usr/bin",)), IDENT)
    assert set(listing.executables) == {"ok"}


def test_symlinked_path_dir_resolved(tmp_path):
    tree = unpacked_tree(
        tmp_path,
        files={"/usr/bin/tool": (b"#!", 0o755)},
        symlinks={"/bin": "/usr/bin"},
    )
    listing = enumerate_executables(tree, PathDirs(("/bin",)), IDENT)
    assert listing.executables == {"tool": "/bin/tool"}


def test_reported_paths_stay_inside_declared_dirs(tmp_path):
    tree = unpacked_tree(
        tmp_path,
        files={"/usr/bin/a": (b"#!", 0o755), "/opt/other/b": (b"#!", 0o755)},
    )
    dirs = PathDirs(("/usr/bin",))
    listing = enumerate_executables(tree, dirs, IDENT)
    for path in listing.executables.values():
        assert path.rsplit("/", 1)[0] in dirs.dirs


# -- diff_against_bases ------------------------------------------------------


def make_listing(names):
    return ExecutableListing(
        identifier=IDENT, executables={n: f"/usr/bin/{n}" for n in names}
    )


def test_diff_subtracts_base_union():
    listing = make_listing(["samtools", "ls", "sh"])
    bases = [BaseSet("debian", frozenset({"ls"})), BaseSet("alpine", frozenset({"sh"}))]
    result = diff_against_bases(listing, bases)
    assert set(result.executables) == {"samtools"}
    assert set(listing.executables) == {"samtools", "ls", "sh"}, "input untouched"


def test_diff_empty_bases_is_identity():
    listing = make_listing(["a", "b"])
    assert diff_against_bases(listing, []) == listing


def test_diff_fully_contained_gives_empty():
    listing = make_listing(["ls", "sh"])
    bases = [BaseSet("x", frozenset({"ls", "sh", "cat"}))]
    assert len(diff_against_bases(listing, bases)) == 0


@given(
    names=st.sets(st.text(alphabet="abcdef", min_size=1, max_size=4), max_size=12),
    base1=st.sets(st.text(alphabet="abcdef", min_size=1, max_size=4), max_size=8),
    base2=st.sets(st.text(alphabet="abcdef", min_size=1, max_size=4), max_size=8),
)
def test_diff_matches_brute_force(names, base1, base2):
    listing = make_listing(sorted(names))
    bases = []
    if base1:
        bases.append(BaseSet("one", frozenset(base1)))
    if base2:
        bases.append(BaseSet("two", frozenset(base2)))
    result = diff_against_bases(listing, bases)
    # Brute force: per-entry membership scan over the union.
    expected = {
        name for name in names if not any(name in b.executables for b in bases)
    }
    assert set(result.executables) == expected
    assert result.names() <= listing.names()


# -- base set files ----------------------------------------------------------


def test_load_base_set_skips_comments(tmp_path):
    path = tmp_path / "mybase.txt"
    path.write_text("# header\nls\ncat # trailing\n\nsh\n")
    base = load_base_set(path)
    assert base.base_name == "mybase"
    assert base.executables == frozenset({"ls", "cat", "sh"})


def test_bundled_base_sets_present():
    sets = bundled_base_sets()
    assert {b.base_name for b in sets} == {"alpine", "busybox", "debian", "ubuntu"}
    debian = next(b for b in sets if b.base_name == "debian")
    assert "ls" in debian.executables
    assert "perl" in debian.executables
    for base in sets:
        assert all("/" not in name for name in base.executables)
