"""A tiny in-process registry speaking the v2 read API, for hermetic tests.

Serves tag lists (with Link-header pagination), manifests, indexes, and
blobs from an in-memory store, plus an optional anonymous bearer-token
flow. Failure injection hooks simulate flaky endpoints and corrupted
blobs. Image payloads are built deterministically (fixed timestamps,
sorted members), so digests and downstream golden files are stable across
runs and platforms.

Run ``python -m module_forge.testing`` to serve a demo image locally.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import tarfile
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Union
from urllib.parse import parse_qs, urlsplit

from .registry_client import (
    MEDIA_INDEX_OCI,
    MEDIA_MANIFEST_OCI,
)

MEDIA_CONFIG_OCI = "application/vnd.oci.image.config.v1+json"
MEDIA_LAYER_TGZ = "application/vnd.oci.image.layer.v1.tar+gzip"


def _digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _canonical_json(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class _Repo:
    tags: dict[str, str] = field(default_factory=dict)
    manifests: dict[str, tuple[str, bytes]] = field(default_factory=dict)
    blobs: dict[str, bytes] = field(default_factory=dict)


class MockRegistry:
    """In-memory registry with an HTTP front end on 127.0.0.1."""

    def __init__(self, require_auth: bool = False, page_size: Optional[int] = None):
        self.repos: dict[str, _Repo] = {}
        self.require_auth = require_auth
        self.page_size = page_size
        self.issued_tokens: set[str] = set()
        self.requests: list[tuple[str, str]] = []
        self._failures: list[dict] = []
        self._truncated: dict[str, bytes] = {}
        self._lock = threading.Lock()
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self._server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    # -- lifecycle -------------------------------------------------------

    def start(self) -> "MockRegistry":
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.02), daemon=True
        )
        self._thread.start()
        return self

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockRegistry":
        return self.start()

    def __exit__(self, *exc_info):
        self.close()

    @property
    def host(self) -> str:
        return f"127.0.0.1:{self._server.server_address[1]}"

    @property
    def url(self) -> str:
        return f"http://{self.host}"

    # -- seeding ---------------------------------------------------------

    def repo(self, name: str) -> _Repo:
        return self.repos.setdefault(name, _Repo())

    def add_blob(self, name: str, data: bytes) -> str:
        digest = _digest(data)
        self.repo(name).blobs[digest] = data
        return digest

    def add_manifest(self, name: str, payload: dict, media_type: str) -> str:
        body = _canonical_json(payload)
        digest = _digest(body)
        self.repo(name).manifests[digest] = (media_type, body)
        return digest

    def set_tag(self, name: str, tag: str, digest: str):
        self.repo(name).tags[tag] = digest

    # -- failure injection -----------------------------------------------

    def fail_times(self, path_fragment: str, times: int, status: int = 500):
        """Answer the next ``times`` requests whose path contains the fragment with ``status``."""
        self._failures.append({"fragment": path_fragment, "remaining": times, "status": status})

    def truncate_blob(self, digest: str, length: int):
        """Serve a blob cut to ``length`` bytes (HTTP-complete, content corrupt)."""
        for repo in self.repos.values():
            if digest in repo.blobs:
                self._truncated[digest] = repo.blobs[digest][:length]
                return
        raise KeyError(digest)

    def _check_failure(self, path: str) -> Optional[int]:
        with self._lock:
            for rule in self._failures:
                if rule["fragment"] in path and rule["remaining"] > 0:
                    rule["remaining"] -= 1
                    return rule["status"]
        return None


def _make_handler(registry: MockRegistry):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def do_HEAD(self):
            self._handle("HEAD")

        def do_GET(self):
            self._handle("GET")

        def _handle(self, method: str):
            registry.requests.append((method, self.path))
            parts = urlsplit(self.path)
            status = registry._check_failure(parts.path)
            if status is not None:
                self._send(status, b'{"errors":[{"code":"UNAVAILABLE"}]}')
                return
            if parts.path == "/token":
                self._token(parts)
                return
            if not parts.path.startswith("/v2"):
                self._send(404, b"not found")
                return
            if registry.require_auth and not self._authorized():
                self._challenge(parts)
                return
            if parts.path == "/v2/" or parts.path == "/v2":
                self._send(200, b"{}", content_type="application/json")
                return
            if parts.path.endswith("/tags/list"):
                name = parts.path[len("/v2/"):-len("/tags/list")]
                self._tags(name, parts)
                return
            if "/manifests/" in parts.path:
                name, _, ref = parts.path[len("/v2/"):].partition("/manifests/")
                self._manifest(method, name, ref)
                return
            if "/blobs/" in parts.path:
                name, _, digest = parts.path[len("/v2/"):].partition("/blobs/")
                self._blob(name, digest)
                return
            self._send(404, b'{"errors":[{"code":"NAME_UNKNOWN"}]}')

        def _authorized(self) -> bool:
            header = self.headers.get("Authorization", "")
            return header.startswith("Bearer ") and header[7:] in registry.issued_tokens

        def _challenge(self, parts):
            scope_name = ""
            if parts.path.startswith("/v2/"):
                tail = parts.path[len("/v2/"):]
                for marker in ("/tags/list", "/manifests/", "/blobs/"):
                    if marker in tail:
                        scope_name = tail.split(marker)[0]
                        break
            header = (
                f'Bearer realm="{registry.url}/token",service="mock-registry",'
                f'scope="repository:{scope_name}:pull"'
            )
            body = b'{"errors":[{"code":"UNAUTHORIZED"}]}'
            self.send_response(401)
            self.send_header("WWW-Authenticate", header)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _token(self, parts):
            token = f"mock-token-{len(registry.issued_tokens)}"
            registry.issued_tokens.add(token)
            self._send(200, json.dumps({"token": token}).encode(), content_type="application/json")

        def _tags(self, name: str, parts):
            repo = registry.repos.get(name)
            if repo is None:
                self._send(404, b'{"errors":[{"code":"NAME_UNKNOWN"}]}')
                return
            query = parse_qs(parts.query)
            tags = list(repo.tags)
            start = 0
            if "last" in query:
                last = query["last"][0]
                if last in tags:
                    start = tags.index(last) + 1
            sizes = [len(tags)]
            if "n" in query:
                sizes.append(int(query["n"][0]))
            if registry.page_size:
                sizes.append(registry.page_size)
            size = min(sizes)
            page = tags[start:start + size]
            body = json.dumps({"name": name, "tags": page}).encode()
            headers = {}
            if start + size < len(tags) and page:
                next_url = f"/v2/{name}/tags/list?n={size}&last={page[-1]}"
                headers["Link"] = f'<{next_url}>; rel="next"'
            self._send(200, body, content_type="application/json", extra=headers)

        def _manifest(self, method: str, name: str, ref: str):
            repo = registry.repos.get(name)
            if repo is None:
                self._send(404, b'{"errors":[{"code":"NAME_UNKNOWN"}]}')
                return
            digest = repo.tags.get(ref, ref)
            found = repo.manifests.get(digest)
            if found is None:
                self._send(404, b'{"errors":[{"code":"MANIFEST_UNKNOWN"}]}')
                return
            media_type, body = found
            extra = {"Docker-Content-Digest": digest}
            if method == "HEAD":
                self._send(200, b"", content_type=media_type, extra=extra, length=len(body))
            else:
                self._send(200, body, content_type=media_type, extra=extra)

        def _blob(self, name: str, digest: str):
            repo = registry.repos.get(name)
            if repo is None or digest not in repo.blobs:
                self._send(404, b'{"errors":[{"code":"BLOB_UNKNOWN"}]}')
                return
            body = registry._truncated.get(digest, repo.blobs[digest])
            self._send(200, body, content_type="application/octet-stream")

        def _send(self, status: int, body: bytes, content_type="application/json", extra=None, length=None):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(length if length is not None else len(body)))
            for key, value in (extra or {}).items():
                self.send_header(key, value)
            self.end_headers()
            if body:
                self.wfile.write(body)

    return Handler


# -- deterministic image construction ----------------------------------------


def make_layer(
    files: Optional[dict[str, Union[bytes, tuple[bytes, int]]]] = None,
    symlinks: Optional[dict[str, str]] = None,
    hardlinks: Optional[dict[str, str]] = None,
    whiteouts: tuple[str, ...] = (),
    opaque_dirs: tuple[str, ...] = (),
    compress: bool = True,
) -> bytes:
    """Build one layer archive with reproducible bytes.

    ``files`` maps in-image paths to content (default mode 0o644) or a
    ``(content, mode)`` pair. Whiteouts and opaque markers are emitted as
    the corresponding special entries.
    """
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        directories = set()
        entries = []
        for path, value in (files or {}).items():
            content, mode = value if isinstance(value, tuple) else (value, 0o644)
            entries.append(("file", path.lstrip("/"), content, mode))
        for path, target in (symlinks or {}).items():
            entries.append(("symlink", path.lstrip("/"), target, 0o777))
        for path, target in (hardlinks or {}).items():
            entries.append(("hardlink", path.lstrip("/"), target.lstrip("/"), 0o644))
        for path in whiteouts:
            parent, base = path.lstrip("/").rsplit("/", 1) if "/" in path.lstrip("/") else ("", path.lstrip("/"))
            name = f"{parent}/.wh.{base}" if parent else f".wh.{base}"
            entries.append(("file", name, b"", 0o644))
        for path in opaque_dirs:
            name = path.lstrip("/").rstrip("/") + "/.wh..wh..opq"
            entries.append(("file", name, b"", 0o644))
        # Files first so hard links always find their target, sorted within
        # each kind for reproducible bytes.
        kind_order = {"file": 0, "symlink": 1, "hardlink": 2}
        for kind, name, payload, mode in sorted(entries, key=lambda e: (kind_order[e[0]], e[1])):
            parent = ""
            for part in name.split("/")[:-1]:
                parent = f"{parent}/{part}" if parent else part
                if parent not in directories:
                    directories.add(parent)
                    info = tarfile.TarInfo(parent)
                    info.type = tarfile.DIRTYPE
                    info.mode = 0o755
                    info.mtime = 0
                    tar.addfile(info)
            info = tarfile.TarInfo(name)
            info.mtime = 0
            if kind == "file":
                info.size = len(payload)
                info.mode = mode
                tar.addfile(info, io.BytesIO(payload))
            elif kind == "symlink":
                info.type = tarfile.SYMTYPE
                info.linkname = payload
                info.mode = mode
                tar.addfile(info)
            else:
                info.type = tarfile.LNKTYPE
                info.linkname = payload
                info.mode = mode
                tar.addfile(info)
    raw = buffer.getvalue()
    if not compress:
        return raw
    return gzip.compress(raw, mtime=0)


def push_image(
    registry: MockRegistry,
    name: str,
    tag: Optional[str],
    layers: list[bytes],
    env: Optional[list[str]] = None,
    entrypoint: Optional[list[str]] = None,
    cmd: Optional[list[str]] = None,
    architecture: str = "amd64",
    os_name: str = "linux",
) -> dict:
    """Register an image (config + manifest + blobs), returning its digests."""
    layer_digests = [registry.add_blob(name, layer) for layer in layers]
    config_payload = {
        "architecture": architecture,
        "os": os_name,
        "config": {},
        "rootfs": {"type": "layers", "diff_ids": layer_digests},
    }
    if env:
        config_payload["config"]["Env"] = env
    if entrypoint:
        config_payload["config"]["Entrypoint"] = entrypoint
    if cmd:
        config_payload["config"]["Cmd"] = cmd
    config_bytes = _canonical_json(config_payload)
    config_digest = registry.add_blob(name, config_bytes)
    manifest = {
        "schemaVersion": 2,
        "mediaType": MEDIA_MANIFEST_OCI,
        "config": {
            "mediaType": MEDIA_CONFIG_OCI,
            "digest": config_digest,
            "size": len(config_bytes),
        },
        "layers": [
            {"mediaType": MEDIA_LAYER_TGZ, "digest": digest, "size": len(registry.repo(name).blobs[digest])}
            for digest in layer_digests
        ],
    }
    manifest_digest = registry.add_manifest(name, manifest, MEDIA_MANIFEST_OCI)
    if tag is not None:
        registry.set_tag(name, tag, manifest_digest)
    return {"manifest": manifest_digest, "config": config_digest, "layers": layer_digests}


def push_index(registry: MockRegistry, name: str, tag: str, children: list[tuple[str, str]]) -> str:
    """Register a multi-arch index over ``(manifest digest, architecture)`` children."""
    manifests = []
    for digest, architecture in children:
        _, body = registry.repo(name).manifests[digest]
        manifests.append(
            {
                "mediaType": MEDIA_MANIFEST_OCI,
                "digest": digest,
                "size": len(body),
                "platform": {"architecture": architecture, "os": "linux"},
            }
        )
    index = {"schemaVersion": 2, "mediaType": MEDIA_INDEX_OCI, "manifests": manifests}
    digest = registry.add_manifest(name, index, MEDIA_INDEX_OCI)
    registry.set_tag(name, tag, digest)
    return digest


# -- a ready-made fixture ------------------------------------------------------


SAMTOOLS_REPO = "biocontainers/samtools"
SAMTOOLS_TAGS = ("1.9--h10a08f8_12", "1.10--h9402c20_2", "1.13--h8c37831_0")

_BASE_FILES = {
    "/bin/sh": (b"#!/fake\nbase shell\n", 0o755),
    "/bin/ls": (b"#!/fake\nbase ls\n", 0o755),
    "/bin/cat": (b"#!/fake\nbase cat\n", 0o755),
    "/usr/bin/env": (b"#!/fake\nbase env\n", 0o755),
    "/usr/bin/perl": (b"#!/fake\nbase perl\n", 0o755),
    "/etc/os-release": (b"ID=debian\n", 0o644),
}

_TOOL_NAMES = ("samtools", "wgsim", "plot-bamstats", "ace2sam")


def seed_samtools(registry: MockRegistry) -> dict:
    """Seed the standard samtools fixture: three version tags plus "latest".

    Every tagged image is two layers: a shared base layer and a per-tag
    tool layer under /usr/local/bin. Returns tag -> digests info.
    """
    base_layer = make_layer(files=_BASE_FILES)
    seeded = {}
    for tag in SAMTOOLS_TAGS:
        tool_layer = make_layer(
            files={
                f"/usr/local/bin/{tool}": (f"#!/fake\n{tool} {tag}\n".encode(), 0o755)
                for tool in _TOOL_NAMES
            }
        )
        seeded[tag] = push_image(
            registry,
            SAMTOOLS_REPO,
            tag,
            layers=[base_layer, tool_layer],
            env=["PATH=/usr/local/bin:/usr/bin:/bin"],
            cmd=["/bin/sh"],
        )
    registry.set_tag(SAMTOOLS_REPO, "latest", seeded[SAMTOOLS_TAGS[-1]]["manifest"])
    return seeded


def _demo():  # pragma: no cover - manual convenience
    import signal

    registry = MockRegistry()
    seed_samtools(registry)
    registry.start()
    print(f"mock registry listening on {registry.url}", flush=True)
    print(
        f"try: module-forge --endpoint quay.io={registry.url} add quay.io/{SAMTOOLS_REPO}",
        flush=True,
    )
    stop = threading.Event()
    # Explicit handlers: background jobs inherit SIGINT as ignored, which
    # would make a bare sigwait hang forever.
    for signum in (signal.SIGINT, signal.SIGTERM):
        signal.signal(signum, lambda *_: stop.set())
    stop.wait()
    registry.close()


if __name__ == "__main__":  # pragma: no cover
    _demo()
