"""Rendering of alias wrapper commands and modulefiles.

Each alias in an entry becomes a shell command that runs the pinned
container through the configured runtime:

    singularity exec <options> -B <bind> docker://<image>:<tag> <path> "$@"

Two modulefile dialects are emitted: Lua for Lmod and Tcl for classic
environment modules. Output is deterministic and golden-file tested.
Alias names and paths are validated upstream; the renderer re-checks them
as a defense against unquoted shell metacharacters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .aliases import VALID_PATH_RE, is_valid_alias_name
from .errors import UnknownAlias
from .identifiers import ContainerIdentifier
from .recipe import RegistryEntry

DIALECTS = ("lua", "tcl")
DEFAULT_RUNTIME = "singularity"


@dataclass(frozen=True)
class RenderContext:
    """Everything the wrapper templates need besides the entry itself."""

    identifier: ContainerIdentifier
    tag: Optional[str] = None
    digest: Optional[str] = None
    runtime: str = DEFAULT_RUNTIME
    runtime_options: tuple[str, ...] = ()
    binds: tuple[str, ...] = ()

    def __post_init__(self):
        if (self.tag is None) == (self.digest is None):
            raise ValueError("pin the container to exactly one tag or digest")
        for bind in self.binds:
            src, sep, dst = bind.partition(":")
            if not sep or not src.startswith("/") or not dst.startswith("/"):
                raise ValueError(f"bind must be /abs/src:/abs/dst, got {bind!r}")

    @property
    def container_ref(self) -> str:
        if self.tag is not None:
            return f"docker://{self.identifier}:{self.tag}"
        return f"docker://{self.identifier}@{self.digest}"


def render_exec_line(entry: RegistryEntry, alias: str, ctx: RenderContext) -> str:
    """The exec wrapper for one alias: runtime, options, binds, image, path, args."""
    try:
        path = entry.aliases[alias]
    except KeyError:
        raise UnknownAlias(f"{entry.docker} has no alias {alias!r}") from None
    _check_safety(alias, path)
    words = [ctx.runtime, "exec"]
    words.extend(ctx.runtime_options)
    for bind in ctx.binds:
        words.extend(["-B", bind])
    words.extend([ctx.container_ref, path, '"$@"'])
    return " ".join(words)


def _check_safety(alias: str, path: str):
    if not is_valid_alias_name(alias):
        raise ValueError(f"unsafe alias name reached the renderer: {alias!r}")
    if not VALID_PATH_RE.match(path):
        raise ValueError(f"unsafe alias path reached the renderer: {path!r}")


def render_modulefile(entry: RegistryEntry, ctx: RenderContext, dialect: str = "lua") -> str:
    """Modulefile text defining one shell command per alias, sorted by name."""
    if dialect not in DIALECTS:
        raise ValueError(f"unknown modulefile dialect: {dialect!r}")
    if dialect == "lua":
        return _render_lua(entry, ctx)
    return _render_tcl(entry, ctx)


def _version_label(ctx: RenderContext) -> str:
    return ctx.tag if ctx.tag is not None else ctx.digest


def _render_lua(entry: RegistryEntry, ctx: RenderContext) -> str:
    description = entry.description.replace("]]", "] ]")
    lines = [
        "help([[" + description + "]])",
        "",
        f'whatis("Name: {entry.docker}")',
        f'whatis("Version: {_version_label(ctx)}")',
        f'whatis("URL: {_escape_quotes(entry.url)}")',
        "",
    ]
    for alias in sorted(entry.aliases):
        command = render_exec_line(entry, alias, ctx)
        csh_command = command[: -len('"$@"')] + "$*"
        lines.append(f"set_shell_function(\"{alias}\", '{command}', '{csh_command}')")
    return "\n".join(lines) + "\n"


def _render_tcl(entry: RegistryEntry, ctx: RenderContext) -> str:
    lines = [
        "#%Module",
        "",
        "proc ModulesHelp { } {",
        f'    puts stderr "{_escape_tcl(entry.description)}"',
        "}",
        "",
        f'module-whatis "Name: {entry.docker}"',
        f'module-whatis "Version: {_version_label(ctx)}"',
        f'module-whatis "URL: {_escape_tcl(entry.url)}"',
        "",
    ]
    for alias in sorted(entry.aliases):
        command = render_exec_line(entry, alias, ctx)
        lines.append("set-function " + alias + " {" + command + "}")
    return "\n".join(lines) + "\n"


def _escape_quotes(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _escape_tcl(text: str) -> str:
    out = _escape_quotes(text)
    for ch in "[]$":
        out = out.replace(ch, "\\" + ch)
    return out
