"""Static inspection of container filesystems.

Reconstructs an image tree from its ordered layer archives, extracts the
PATH directories advertised by the image config, enumerates executables
found there, and subtracts the executables already present in common base
images. Nothing is ever executed; symlinks are resolved inside the
reconstructed tree only.
"""

from __future__ import annotations

import logging
import os
import posixpath
import shutil
import stat
import tarfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .errors import MalformedArchive, PathTraversal
from .identifiers import ContainerIdentifier

logger = logging.getLogger(__name__)

# Conventional search path used when an image config does not set PATH.
DEFAULT_PATH = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin"

WHITEOUT_PREFIX = ".wh."
OPAQUE_MARKER = ".wh..wh..opq"

BUNDLED_BASE_NAMES = ("alpine", "busybox", "debian", "ubuntu")

_MAX_LINK_HOPS = 40


@dataclass(frozen=True)
class PathDirs:
    """Ordered absolute directories from a PATH string."""

    dirs: tuple[str, ...]

    def __post_init__(self):
        for d in self.dirs:
            if not d.startswith("/"):
                raise ValueError(f"PATH entry is not absolute: {d!r}")


@dataclass(frozen=True)
class ExecutableListing:
    """The executables found on one container's PATH.

    Stored as a name -> absolute path mapping; enumeration already applies
    first-PATH-occurrence-wins, so each basename has exactly one path.
    """

    identifier: ContainerIdentifier
    executables: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        checked = {}
        for name, path in self.executables.items():
            if not path.startswith("/"):
                raise ValueError(f"executable path is not absolute: {path!r}")
            if posixpath.basename(path) != name:
                raise ValueError(f"basename of {path!r} is not {name!r}")
            checked[name] = path
        object.__setattr__(self, "executables", dict(sorted(checked.items())))

    @property
    def entries(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.executables.items())

    def names(self) -> frozenset[str]:
        return frozenset(self.executables)

    def __len__(self) -> int:
        return len(self.executables)


@dataclass(frozen=True)
class BaseSet:
    """Executable basenames known to come from a common base image."""

    base_name: str
    executables: frozenset[str]

    def __post_init__(self):
        if not self.base_name:
            raise ValueError("base set needs a name")
        for name in self.executables:
            if "/" in name:
                raise ValueError(f"base set entries must be basenames: {name!r}")


def load_base_set(path: Union[str, Path], base_name: Optional[str] = None) -> BaseSet:
    """Read a base set file: one basename per line, ``#`` comments allowed."""
    path = Path(path)
    names = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.add(line)
    return BaseSet(base_name=base_name or path.stem, executables=frozenset(names))


def bundled_base_sets() -> list[BaseSet]:
    """The base sets shipped with the package (alpine, busybox, debian, ubuntu)."""
    sets = []
    root = resources.files("module_forge").joinpath("data/bases")
    for name in BUNDLED_BASE_NAMES:
        text = root.joinpath(f"{name}.txt").read_text(encoding="utf-8")
        names = set()
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                names.add(line)
        sets.append(BaseSet(base_name=name, executables=frozenset(names)))
    return sets


def extract_path_dirs(config) -> PathDirs:
    """Pull the search path out of an image config.

    The last ``PATH=`` entry wins, mirroring how layered Dockerfiles
    override the variable. Images without a PATH get the conventional
    default. Relative entries are dropped.
    """
    value = None
    for item in config.env:
        key, _, rest = item.partition("=")
        if key == "PATH":
            value = rest
    if value is None:
        value = DEFAULT_PATH
    dirs = tuple(d for d in value.split(":") if d.startswith("/"))
    return PathDirs(dirs=dirs)


def unpack_layers(layers: Iterable[Union[str, Path]], dest: Union[str, Path]) -> Path:
    """Apply ordered layer archives (base first) onto an empty directory.

    Whiteout entries (basename ``.wh.<name>``) delete the shadowed file or
    tree; an opaque marker (``.wh..wh..opq``) clears the directory contents
    inherited from lower layers. Entries that would escape ``dest`` raise
    PathTraversal. Device nodes and fifos are skipped.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    dest_real = os.path.realpath(dest)
    for layer in layers:
        try:
            with tarfile.open(layer, mode="r:*") as tf:
                members = tf.getmembers()
                _apply_whiteouts(members, dest)
                for member in members:
                    _extract_member(tf, member, dest, dest_real)
        except tarfile.TarError as exc:
            raise MalformedArchive(f"cannot read layer {layer}: {exc}") from exc
    return dest


def _clean_name(member_name: str) -> Optional[str]:
    name = member_name.lstrip("/")
    if name.startswith("./"):
        name = name[2:]
    name = name.rstrip("/")
    if not name or name == ".":
        return None
    for part in name.split("/"):
        if part == "..":
            raise PathTraversal(f"layer entry escapes the tree: {member_name!r}")
    return name


def _apply_whiteouts(members, dest: Path):
    for member in members:
        name = _clean_name(member.name)
        if name is None:
            continue
        parent, base = posixpath.split(name)
        if base == OPAQUE_MARKER:
            target_dir = dest / parent if parent else dest
            if target_dir.is_dir():
                for child in target_dir.iterdir():
                    _remove(child)
        elif base.startswith(WHITEOUT_PREFIX):
            shadowed = dest / parent / base[len(WHITEOUT_PREFIX):]
            _remove(shadowed)


def _remove(path: Path):
    if path.is_dir() and not path.is_symlink():
        shutil.rmtree(path)
    elif path.exists() or path.is_symlink():
        path.unlink()


def _extract_member(tf: tarfile.TarFile, member: tarfile.TarInfo, dest: Path, dest_real: str):
    name = _clean_name(member.name)
    if name is None:
        return
    base = posixpath.basename(name)
    if base == OPAQUE_MARKER or base.startswith(WHITEOUT_PREFIX):
        return
    target = dest / name
    parent = target.parent
    parent.mkdir(parents=True, exist_ok=True)
    # A lower layer may have planted a symlinked parent pointing outside the
    # scratch tree; refuse to write through it.
    parent_real = os.path.realpath(parent)
    if parent_real != dest_real and not parent_real.startswith(dest_real + os.sep):
        raise PathTraversal(f"layer entry escapes the tree: {member.name!r}")

    if member.isdir():
        if target.exists() and not target.is_dir():
            target.unlink()
        target.mkdir(exist_ok=True)
        return
    if target.is_dir() and not target.is_symlink():
        shutil.rmtree(target)
    elif target.exists() or target.is_symlink():
        target.unlink()
    if member.issym():
        os.symlink(member.linkname, target)
    elif member.islnk():
        # Hard links become independent copies of the linked file.
        source = dest / (_clean_name(member.linkname) or "")
        if not source.is_file():
            raise MalformedArchive(f"hard link target missing: {member.linkname!r}")
        shutil.copyfile(source, target)
        shutil.copymode(source, target)
    elif member.isfile():
        extracted = tf.extractfile(member)
        if extracted is None:
            raise MalformedArchive(f"unreadable file entry: {member.name!r}")
        with open(target, "wb") as out:
            shutil.copyfileobj(extracted, out)
        os.chmod(target, member.mode & 0o7777)
    else:
        logger.debug("skipping special entry %s", member.name)


def enumerate_executables(tree: Union[str, Path], dirs: PathDirs, identifier: ContainerIdentifier) -> ExecutableListing:
    """List executables found in the PATH directories of an unpacked tree.

    A file counts as executable when it is a regular file with any execute
    bit set, or a symlink resolving (inside the tree) to one. The first
    PATH directory providing a basename wins, matching shell resolution.
    """
    tree = Path(tree)
    found: dict[str, str] = {}
    for directory in dirs.dirs:
        fs_dir = _resolve_in_tree(tree, directory)
        if fs_dir is None or not fs_dir.is_dir():
            continue
        for entry in sorted(os.listdir(fs_dir)):
            if entry in found:
                continue
            resolved = _resolve_in_tree(tree, posixpath.join(directory, entry))
            if resolved is None:
                continue
            try:
                st = os.stat(resolved, follow_symlinks=False)
            except OSError:
                continue
            if stat.S_ISREG(st.st_mode) and st.st_mode & 0o111:
                found[entry] = posixpath.join(directory, entry)
    return ExecutableListing(identifier=identifier, executables=found)


def _resolve_in_tree(tree: Path, container_path: str) -> Optional[Path]:
    """Resolve a container-absolute path within the unpacked tree.

    Symlink targets are reinterpreted relative to the tree root, so a link
    can never lead outside it; ``..`` clamps at the root like in a real
    chroot. Returns None on dangling links or link loops.
    """
    parts = [p for p in container_path.split("/") if p]
    cur = ""
    hops = 0
    i = 0
    while i < len(parts):
        part = parts[i]
        i += 1
        if part == ".":
            continue
        if part == "..":
            cur = posixpath.dirname(cur)
            if cur == "/":
                cur = ""
            continue
        candidate = f"{cur}/{part}"
        fs = tree / candidate.lstrip("/")
        if fs.is_symlink():
            hops += 1
            if hops > _MAX_LINK_HOPS:
                return None
            link = os.readlink(fs)
            rest = parts[i:]
            if link.startswith("/"):
                base = link
            else:
                base = posixpath.join(posixpath.dirname(candidate) or "/", link)
            parts = [p for p in base.split("/") if p] + rest
            cur = ""
            i = 0
            continue
        if not fs.exists() and i <= len(parts) - 1:
            return None
        cur = candidate
    return tree / cur.lstrip("/") if cur else tree


def diff_against_bases(listing: ExecutableListing, bases: Iterable[BaseSet]) -> ExecutableListing:
    """Drop every executable whose basename appears in any base set.

    Returns a new listing; the input is left untouched.
    """
    known = set()
    for base in bases:
        known |= base.executables
    kept = {name: path for name, path in listing.executables.items() if name not in known}
    return ExecutableListing(identifier=listing.identifier, executables=kept)
