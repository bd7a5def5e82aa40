"""Command-line orchestration.

Subcommands wire the discovery, inspection, selection, and rendering
pieces into complete workflows: ``add`` generates a registry entry from
scratch, ``update`` refreshes tags and digests, ``cache`` maintains the
executable listings and counts, ``export`` emits the static API,
``groups`` reports the update schedule, and ``render`` produces
modulefiles.

Exit codes: 0 success, 1 partial or local failure, 2 usage or
precondition error, 3 registry/network failure. Data goes to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import logging
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path
from typing import Optional

import click

from ._fsio import atomic_write_text
from .aliases import select_aliases, verbatim_aliases
from .cache import (
    COUNTS_FILENAME,
    CacheStore,
    FrequencyTable,
    build_counts,
    load_counts,
    store_listing,
    write_counts,
)
from .config import BadConfig, Config, load_config
from .errors import (
    DuplicateIdentifier,
    InvalidIdentifier,
    ModuleForgeError,
    NoTags,
    RegistryError,
)
from .identifiers import ContainerIdentifier
from .inspector import (
    bundled_base_sets,
    diff_against_bases,
    enumerate_executables,
    extract_path_dirs,
    load_base_set,
    unpack_layers,
)
from .recipe import (
    build_entry,
    entry_path,
    export_static_api,
    list_entries,
    load_entry,
    update_entry,
    write_entry,
)
from .registry_client import RegistryClient
from .renderer import DIALECTS, RenderContext, render_modulefile
from .scheduler import due_on, partition
from .tags import filter_tags, sort_and_select

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_NETWORK = 3


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_identifier(raw: str) -> ContainerIdentifier:
    try:
        return ContainerIdentifier.parse(raw)
    except InvalidIdentifier as exc:
        _fail(str(exc), EXIT_USAGE)


def _parse_date(raw: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError as exc:
        _fail(f"bad date {raw!r}: {exc}", EXIT_USAGE)


def _read_identifier_file(path: Path) -> list[ContainerIdentifier]:
    """Newline-delimited identifiers; blank lines and # comments ignored."""
    identifiers = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            identifiers.append(ContainerIdentifier.parse(line))
        except InvalidIdentifier as exc:
            _fail(f"{path}: {exc}", EXIT_USAGE)
    return identifiers


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="TOML config file.")
@click.option("--registry-root", type=click.Path(path_type=Path), default=None, help="Directory of registry entries.")
@click.option("--cache-root", type=click.Path(path_type=Path), default=None, help="Directory of executable listings.")
@click.option("--endpoint", "endpoints", multiple=True, metavar="HOST=URL", help="Route a registry host to an explicit base URL (repeatable).")
@click.option("--maintainer", default=None, help="Maintainer recorded in generated entries.")
@click.option("--runtime", default=None, help="Container runtime word used in wrappers.")
@click.option("--arch", default=None, help="Architecture picked from multi-arch images.")
@click.option("--rare-max", type=int, default=None, help="Always keep names rarer than this many containers.")
@click.option("--extra-cap", type=int, default=None, help="Cap on additional low-frequency aliases.")
@click.option("--common-max", type=int, default=None, help="Frequency ceiling for the additional aliases.")
@click.option("--jobs", type=int, default=None, help="Worker pool size for batch commands.")
@click.option("-v", "--verbose", count=True, help="Increase log output (repeatable).")
@click.pass_context
def cli(ctx, config_path, endpoints, verbose, **overrides):
    """Generate and maintain container module registry entries."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    endpoint_map = {}
    for item in endpoints:
        host, sep, url = item.partition("=")
        if not sep or not host or not url:
            raise click.BadParameter(f"expected HOST=URL, got {item!r}", param_hint="--endpoint")
        endpoint_map[host] = url
    try:
        cfg = load_config(config_path, **overrides)
    except BadConfig as exc:
        _fail(str(exc), EXIT_USAGE)
    cfg.endpoints.update(endpoint_map)
    ctx.obj = cfg


def main():
    cli(auto_envvar_prefix="MODULE_FORGE")


# -- shared pipeline pieces ---------------------------------------------------


def _client(cfg: Config) -> RegistryClient:
    return RegistryClient(endpoints=cfg.endpoints)


def _base_sets(cfg: Config):
    sets = bundled_base_sets()
    for path in cfg.base_sets:
        sets.append(load_base_set(path))
    return sets


def _discover_tags(client: RegistryClient, identifier: ContainerIdentifier, exclusions):
    """Tags, their manifest refs, and their digests, filtered and ordered."""
    tag_list = client.list_tags(identifier)
    ordering = sort_and_select(filter_tags(tag_list, exclusions))
    refs = {c.raw: client.resolve_digest(identifier, c.raw) for c in ordering.ordered}
    digests = {tag: ref.digest for tag, ref in refs.items()}
    return ordering, refs, digests


def _default_tag(ordering, digests) -> str:
    if ordering.latest and ordering.latest.raw in digests:
        return ordering.latest.raw
    return max(digests)


def _listing_for(client, cfg: Config, identifier, ref, keep_scratch=False):
    """Download and unpack one image, then enumerate its PATH executables."""
    image_config = client.fetch_image_config(identifier, ref, architecture=cfg.arch)
    dirs = extract_path_dirs(image_config)
    scratch = Path(tempfile.mkdtemp(prefix="module-forge-"))
    try:
        layer_dir = scratch / "layers"
        layer_dir.mkdir()
        archives = []
        for index, digest in enumerate(image_config.layer_digests):
            archive = layer_dir / f"{index:03d}.tar.gz"
            with open(archive, "wb") as sink:
                client.fetch_layer(identifier, digest, sink)
            archives.append(archive)
        tree = unpack_layers(archives, scratch / "rootfs")
        return enumerate_executables(tree, dirs, identifier)
    finally:
        if keep_scratch:
            click.echo(f"scratch tree kept at {scratch}", err=True)
        else:
            shutil.rmtree(scratch, ignore_errors=True)


def _load_table(cfg: Config, counts_path: Optional[Path]) -> Optional[FrequencyTable]:
    if counts_path is not None:
        return load_counts(counts_path)
    default = cfg.cache_root / COUNTS_FILENAME
    if default.is_file():
        return load_counts(default)
    return None


# -- add ----------------------------------------------------------------------


@cli.command()
@click.argument("identifier")
@click.option("--force", is_flag=True, help="Regenerate an entry that already exists.")
@click.option("--skip-tag", "skip_tags", multiple=True, metavar="GLOB", help="Exclude tags matching this glob (repeatable).")
@click.option("--counts", "counts_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Frequency counts file for alias selection.")
@click.option("--description", default=None)
@click.option("--url", default=None)
@click.option("--keep-scratch", is_flag=True, help="Keep the unpacked filesystem for debugging.")
@click.pass_obj
def add(cfg: Config, identifier, force, skip_tags, counts_path, description, url, keep_scratch):
    """Discover a container and write a new registry entry for it."""
    ident = _parse_identifier(identifier)
    target = entry_path(cfg.registry_root, ident)
    if target.exists() and not force:
        _fail(f"entry already exists at {target}; use --force to regenerate", EXIT_USAGE)
    exclusions = tuple(skip_tags) + cfg.skip_tags
    try:
        with _client(cfg) as client:
            ordering, refs, digests = _discover_tags(client, ident, exclusions)
            if not digests:
                _fail(f"no installable tags found for {ident}", EXIT_PARTIAL)
            listing = _listing_for(client, cfg, ident, refs[_default_tag(ordering, digests)], keep_scratch)
    except RegistryError as exc:
        _fail(f"registry failure ({type(exc).__name__}): {exc}", EXIT_NETWORK)
    except ModuleForgeError as exc:
        _fail(f"{type(exc).__name__}: {exc}", EXIT_PARTIAL)
    interesting = diff_against_bases(listing, _base_sets(cfg))
    try:
        table = _load_table(cfg, counts_path)
    except ModuleForgeError as exc:
        _fail(f"cannot read counts: {exc}", EXIT_PARTIAL)
    if table is not None:
        chosen = select_aliases(
            ident, interesting, table,
            rare_max=cfg.rare_max, extra_cap=cfg.extra_cap, common_max=cfg.common_max,
        )
    else:
        logger.info("no frequency counts available; keeping the base-diffed set")
        chosen = verbatim_aliases(interesting)
    try:
        entry = build_entry(
            ident, ordering, digests, chosen,
            description=description or f"{ident.repository} container",
            url=url or f"https://{ident}",
            maintainer=cfg.maintainer,
            filter=tuple(skip_tags) or None,
        )
        written = write_entry(cfg.registry_root, entry)
    except (NoTags, ModuleForgeError) as exc:
        _fail(f"{type(exc).__name__}: {exc}", EXIT_PARTIAL)
    click.echo(str(written))


# -- update -------------------------------------------------------------------


@cli.command()
@click.option("--all", "update_all", is_flag=True, help="Update every entry in the registry.")
@click.option("--due", "due_date", metavar="YYYY-MM-DD", default=None, help="Update the entries scheduled for this date.")
@click.argument("identifiers", nargs=-1)
@click.pass_obj
def update(cfg: Config, update_all, due_date, identifiers):
    """Refresh tags and digests for selected entries, printing a delta per change."""
    selected = _select_entries(cfg, update_all, due_date, identifiers)
    if not selected:
        click.echo("nothing to update", err=True)
        return
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        outcomes = list(pool.map(lambda item: _update_one(cfg, *item), selected))
    failures = 0
    for (ident, _), outcome in zip(selected, outcomes):
        if isinstance(outcome, Exception):
            failures += 1
            click.echo(f"{ident}: failed: {outcome}", err=True)
            continue
        for line in outcome.lines():
            click.echo(f"{ident}: {line}")
    if failures:
        sys.exit(EXIT_PARTIAL)


def _select_entries(cfg: Config, update_all, due_date, identifiers):
    if sum([bool(update_all), bool(due_date), bool(identifiers)]) != 1:
        _fail("choose exactly one of --all, --due, or explicit identifiers", EXIT_USAGE)
    if identifiers:
        chosen = []
        for raw in identifiers:
            ident = _parse_identifier(raw)
            path = entry_path(cfg.registry_root, ident)
            if not path.is_file():
                _fail(f"no entry for {ident} under {cfg.registry_root}", EXIT_USAGE)
            chosen.append((ident, path))
        return chosen
    everything = list_entries(cfg.registry_root)
    if update_all:
        return everything
    when = _parse_date(due_date)
    due = set(map(str, due_on([ident for ident, _ in everything], when)))
    return [(ident, path) for ident, path in everything if str(ident) in due]


def _update_one(cfg: Config, ident, path):
    """Returns the EntryDelta, or the exception on failure."""
    try:
        entry = load_entry(path)
        exclusions = (entry.filter or ()) + cfg.skip_tags
        with _client(cfg) as client:
            ordering, _, digests = _discover_tags(client, ident, exclusions)
        updated, delta = update_entry(entry, ordering, digests)
        if not delta.is_empty():
            write_entry(cfg.registry_root, updated)
        return delta
    except Exception as exc:  # collected and reported per entry
        logger.debug("update failed for %s", ident, exc_info=True)
        return exc


# -- cache --------------------------------------------------------------------


@cli.group()
def cache():
    """Maintain the executable listing cache and its frequency counts."""


@cache.command("add")
@click.argument("list_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--refresh", is_flag=True, help="Re-fetch listings that are already cached.")
@click.pass_obj
def cache_add(cfg: Config, list_file, refresh):
    """Discover and store executable listings for every identifier in a file."""
    identifiers = _read_identifier_file(list_file)
    store = CacheStore(cfg.cache_root)

    def work(ident):
        if store.has_listing(ident) and not refresh:
            return "skipped"
        with _client(cfg) as client:
            ordering, refs, digests = _discover_tags(client, ident, cfg.skip_tags)
            if not digests:
                raise NoTags(f"no installable tags for {ident}")
            listing = _listing_for(client, cfg, ident, refs[_default_tag(ordering, digests)])
        store_listing(store, listing)
        return "stored"

    def safely(ident):
        try:
            return work(ident)
        except Exception as exc:
            logger.debug("cache add failed for %s", ident, exc_info=True)
            return exc

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        outcomes = list(pool.map(safely, identifiers))
    stored = outcomes.count("stored")
    skipped = outcomes.count("skipped")
    failed = 0
    for ident, outcome in zip(identifiers, outcomes):
        if isinstance(outcome, Exception):
            failed += 1
            click.echo(f"{ident}: failed: {outcome}", err=True)
    click.echo(f"stored {stored}, skipped {skipped}, failed {failed}", err=True)
    if failed:
        sys.exit(EXIT_PARTIAL)


@cache.command("counts")
@click.pass_obj
def cache_counts(cfg: Config):
    """Aggregate stored listings into the counts document."""
    try:
        table = build_counts(CacheStore(cfg.cache_root))
        path = write_counts(table, cfg.cache_root / COUNTS_FILENAME)
    except ModuleForgeError as exc:
        _fail(str(exc), EXIT_PARTIAL)
    click.echo(str(path))


# -- export, groups, render -----------------------------------------------------


@cli.command()
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Output directory (default: <registry root>/api).")
@click.pass_obj
def export(cfg: Config, out):
    """Write the registry as a static JSON API."""
    out = out or cfg.registry_root / "api"
    try:
        result = export_static_api(cfg.registry_root, out)
    except ModuleForgeError as exc:
        _fail(str(exc), EXIT_PARTIAL)
    click.echo(str(result))


@cli.command()
@click.option("--list", "list_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True, help="File of identifiers, one per line.")
@click.option("--due", "due_date", metavar="YYYY-MM-DD", default=None, help="Print only the identifiers scheduled for this date.")
def groups(list_file, due_date):
    """Show the day-of-month update groups for a list of identifiers."""
    identifiers = _read_identifier_file(list_file)
    if due_date is not None:
        when = _parse_date(due_date)
        for ident in due_on(identifiers, when):
            click.echo(str(ident))
        return
    try:
        for group in partition(identifiers):
            for member in group.members:
                click.echo(f"{group.day}\t{member}")
    except DuplicateIdentifier as exc:
        _fail(f"duplicate identifier: {exc}", EXIT_USAGE)


@cli.command()
@click.argument("identifier")
@click.option("--tag", default=None, help="Render for this tag (default: the entry's latest).")
@click.option("--dialect", type=click.Choice(DIALECTS), default="lua", show_default=True)
@click.option("--target", type=click.Path(path_type=Path), default=None, help="Write under this directory instead of stdout.")
@click.option("--option", "options", multiple=True, help="Extra runtime option (repeatable).")
@click.option("--bind", "binds", multiple=True, metavar="/SRC:/DST", help="Bind mount (repeatable).")
@click.pass_obj
def render(cfg: Config, identifier, tag, dialect, target, options, binds):
    """Render the modulefile for an existing registry entry."""
    ident = _parse_identifier(identifier)
    path = entry_path(cfg.registry_root, ident)
    if not path.is_file():
        _fail(f"no entry for {ident} under {cfg.registry_root}", EXIT_USAGE)
    try:
        entry = load_entry(path)
    except ModuleForgeError as exc:
        _fail(str(exc), EXIT_PARTIAL)
    tag = tag or entry.latest_tag
    if tag not in entry.tags:
        _fail(f"entry has no tag {tag!r}", EXIT_USAGE)
    try:
        context = RenderContext(
            identifier=ident, tag=tag, runtime=cfg.runtime,
            runtime_options=tuple(options), binds=tuple(binds),
        )
        text = render_modulefile(entry, context, dialect)
    except ValueError as exc:
        _fail(str(exc), EXIT_USAGE)
    if target is None:
        click.echo(text, nl=False)
        return
    suffix = "lua" if dialect == "lua" else "tcl"
    out = target / str(ident) / tag / f"module.{suffix}"
    atomic_write_text(out, text)
    click.echo(str(out))


if __name__ == "__main__":
    main()
