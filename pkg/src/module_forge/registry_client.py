"""HTTP client for the container registry v2 API.

Speaks the minimal read-only subset needed to catalogue images: tag listing
(with pagination), manifest and digest resolution (including multi-arch
indexes), image config retrieval, and layer blob download. Anonymous
bearer-token challenges are handled automatically; a static token may be
supplied through the ``MODULE_FORGE_TOKEN`` environment variable.

Every blob that leaves this module has been verified against its sha256
digest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import BinaryIO, Optional
from urllib.parse import urljoin, urlsplit

import requests

from .errors import (
    AuthFailure,
    IntegrityError,
    NotFoundError,
    RegistryError,
    TransientError,
    UnsupportedMediaType,
)
from .identifiers import ContainerIdentifier

logger = logging.getLogger(__name__)

TOKEN_ENV_VAR = "MODULE_FORGE_TOKEN"

DIGEST_RE = re.compile(r"^sha256:[0-9a-f]{64}$")

MEDIA_MANIFEST_DOCKER = "application/vnd.docker.distribution.manifest.v2+json"
MEDIA_MANIFEST_LIST_DOCKER = "application/vnd.docker.distribution.manifest.list.v2+json"
MEDIA_MANIFEST_OCI = "application/vnd.oci.image.manifest.v1+json"
MEDIA_INDEX_OCI = "application/vnd.oci.image.index.v1+json"

_SINGLE_MANIFEST_TYPES = {MEDIA_MANIFEST_DOCKER, MEDIA_MANIFEST_OCI}
_INDEX_TYPES = {MEDIA_MANIFEST_LIST_DOCKER, MEDIA_INDEX_OCI}

_MANIFEST_ACCEPT = ", ".join(
    [MEDIA_INDEX_OCI, MEDIA_MANIFEST_LIST_DOCKER, MEDIA_MANIFEST_OCI, MEDIA_MANIFEST_DOCKER]
)

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def sha256_hexdigest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class TagList:
    """All tags of one repository, in the order the registry returned them."""

    identifier: ContainerIdentifier
    tags: tuple[str, ...]
    fetched_at: datetime

    def __post_init__(self):
        seen = []
        for tag in self.tags:
            if not tag:
                raise ValueError("empty tag in tag list")
            if tag not in seen:
                seen.append(tag)
        object.__setattr__(self, "tags", tuple(seen))


@dataclass(frozen=True)
class ManifestRef:
    """A content-addressed reference to one manifest document."""

    media_type: str
    digest: str
    size_bytes: int

    def __post_init__(self):
        if not DIGEST_RE.match(self.digest):
            raise ValueError(f"malformed digest: {self.digest!r}")
        if self.size_bytes < 0:
            raise ValueError("negative manifest size")


@dataclass(frozen=True)
class ImageConfig:
    """The interesting parts of an image config blob.

    ``layer_digests`` come from the manifest's layer descriptors (the
    compressed blobs the registry actually serves), ordered base-first.
    """

    env: tuple[str, ...] = ()
    entrypoint: Optional[tuple[str, ...]] = None
    cmd: Optional[tuple[str, ...]] = None
    layer_digests: tuple[str, ...] = ()

    def __post_init__(self):
        for item in self.env:
            if "=" not in item:
                raise ValueError(f"environment entry without '=': {item!r}")


@dataclass
class RetryPolicy:
    """Capped exponential backoff for unattended runs."""

    attempts: int = 3
    initial_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.initial_delay * (2 ** attempt), self.max_delay)


@dataclass
class _Challenge:
    realm: str
    service: str
    scope: str


class RegistryClient:
    """Read-only client for one or more v2 registries.

    Safe for concurrent use: the only shared mutable state is the bearer
    token cache, which is guarded by a lock. ``endpoints`` maps a registry
    host to an explicit base URL (e.g. a local mirror); hosts without an
    override are reached at ``https://<host>``.
    """

    def __init__(
        self,
        endpoints: Optional[dict[str, str]] = None,
        retry: Optional[RetryPolicy] = None,
        token: Optional[str] = None,
        timeout: float = 30.0,
        sleep=time.sleep,
    ):
        self.endpoints = dict(endpoints or {})
        self.retry = retry or RetryPolicy()
        self.timeout = timeout
        self._static_token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self._session = requests.Session()
        self._tokens: dict[tuple[str, str, str], str] = {}
        self._token_lock = threading.Lock()
        self._sleep = sleep

    def close(self):
        self._session.close()

    def __enter__(self) -> "RegistryClient":
        return self

    def __exit__(self, *exc_info):
        self.close()

    # -- URL and auth plumbing ------------------------------------------

    def _base_url(self, host: str) -> str:
        return self.endpoints.get(host, f"https://{host}").rstrip("/")

    def _url(self, id: ContainerIdentifier, suffix: str) -> str:
        return f"{self._base_url(id.registry_host)}/v2/{id.path}/{suffix}"

    def _parse_challenge(self, header: str) -> Optional[_Challenge]:
        if not header.lower().startswith("bearer"):
            return None
        fields = dict(re.findall(r'(\w+)="([^"]*)"', header))
        realm = fields.get("realm")
        if not realm:
            return None
        return _Challenge(realm=realm, service=fields.get("service", ""), scope=fields.get("scope", ""))

    def _fetch_token(self, challenge: _Challenge) -> str:
        key = (challenge.realm, challenge.service, challenge.scope)
        with self._token_lock:
            cached = self._tokens.get(key)
        if cached:
            return cached
        params = {}
        if challenge.service:
            params["service"] = challenge.service
        if challenge.scope:
            params["scope"] = challenge.scope
        try:
            resp = self._session.get(challenge.realm, params=params, timeout=self.timeout)
        except requests.RequestException as exc:
            raise AuthFailure(f"token endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise AuthFailure(f"token endpoint returned {resp.status_code}")
        try:
            token = resp.json().get("token") or resp.json().get("access_token")
        except ValueError:
            token = None
        if not token:
            raise AuthFailure("token endpoint returned no token")
        with self._token_lock:
            self._tokens[key] = token
        return token

    def _drop_cached_token(self, challenge: _Challenge):
        with self._token_lock:
            self._tokens.pop((challenge.realm, challenge.service, challenge.scope), None)

    def _request(self, method: str, url: str, headers=None, stream=False) -> requests.Response:
        """One request with retries plus at most one token round-trip per attempt."""
        headers = dict(headers or {})
        if self._static_token:
            headers["Authorization"] = f"Bearer {self._static_token}"
        last_exc: Optional[Exception] = None
        for attempt in range(self.retry.attempts):
            if attempt:
                self._sleep(self.retry.delay(attempt - 1))
            try:
                resp = self._session.request(
                    method, url, headers=headers, stream=stream, timeout=self.timeout
                )
            except requests.RequestException as exc:
                logger.debug("transient failure on %s %s: %s", method, url, exc)
                last_exc = exc
                continue
            if resp.status_code == 401 and not self._static_token:
                challenge = self._parse_challenge(resp.headers.get("WWW-Authenticate", ""))
                if challenge is None:
                    raise AuthFailure(f"unauthorized and no bearer challenge from {url}")
                resp.close()
                token = self._fetch_token(challenge)
                retry_headers = dict(headers, Authorization=f"Bearer {token}")
                try:
                    resp = self._session.request(
                        method, url, headers=retry_headers, stream=stream, timeout=self.timeout
                    )
                except requests.RequestException as exc:
                    last_exc = exc
                    continue
                if resp.status_code == 401:
                    self._drop_cached_token(challenge)
                    raise AuthFailure(f"token was rejected by {url}")
            if resp.status_code in _RETRYABLE_STATUS:
                logger.debug("retryable status %s on %s", resp.status_code, url)
                last_exc = TransientError(f"{url} returned {resp.status_code}")
                resp.close()
                continue
            if resp.status_code == 404:
                resp.close()
                raise NotFoundError(f"not found: {url}")
            if resp.status_code in (401, 403):
                resp.close()
                raise AuthFailure(f"access denied ({resp.status_code}): {url}")
            if resp.status_code >= 400:
                body = resp.text[:200]
                resp.close()
                raise RegistryError(f"{url} returned {resp.status_code}: {body}")
            return resp
        raise TransientError(f"gave up after {self.retry.attempts} attempts: {last_exc}")

    # -- API operations ---------------------------------------------------

    def list_tags(self, id: ContainerIdentifier) -> TagList:
        """List every tag of a repository, following pagination to exhaustion."""
        tags: list[str] = []
        url = self._url(id, "tags/list")
        while url:
            resp = self._request("GET", url)
            try:
                payload = resp.json()
            except ValueError as exc:
                raise RegistryError(f"tag list from {url} is not JSON: {exc}") from exc
            tags.extend(payload.get("tags") or [])
            url = self._next_link(resp, url)
        return TagList(identifier=id, tags=tuple(tags), fetched_at=datetime.now(timezone.utc))

    @staticmethod
    def _next_link(resp: requests.Response, current_url: str) -> Optional[str]:
        link = resp.headers.get("Link", "")
        for part in link.split(","):
            if 'rel="next"' not in part:
                continue
            match = re.search(r"<([^>]+)>", part)
            if match:
                target = match.group(1)
                if urlsplit(target).netloc:
                    return target
                return urljoin(current_url, target)
        return None

    def resolve_digest(self, id: ContainerIdentifier, tag: str) -> ManifestRef:
        """Resolve a tag to its manifest digest.

        Multi-arch tags resolve to the index digest, which is the stable
        reference an installer should pin.
        """
        resp = self._request("GET", self._url(id, f"manifests/{tag}"), headers={"Accept": _MANIFEST_ACCEPT})
        body = resp.content
        digest = resp.headers.get("Docker-Content-Digest") or sha256_hexdigest(body)
        media_type = resp.headers.get("Content-Type", "").split(";")[0].strip()
        return ManifestRef(media_type=media_type, digest=digest, size_bytes=len(body))

    def fetch_image_config(
        self, id: ContainerIdentifier, ref: ManifestRef, architecture: str = "amd64", os_name: str = "linux"
    ) -> ImageConfig:
        """Fetch and decode the image config behind a manifest reference.

        An index manifest is narrowed to one child via the architecture
        selector before the config blob is downloaded and digest-checked.
        """
        manifest, media_type = self._get_manifest(id, ref.digest)
        if media_type in _INDEX_TYPES:
            child_digest = self._select_platform(manifest, architecture, os_name)
            manifest, media_type = self._get_manifest(id, child_digest)
        if media_type not in _SINGLE_MANIFEST_TYPES:
            raise UnsupportedMediaType(f"cannot read manifest of type {media_type!r}")
        config_desc = manifest.get("config") or {}
        config_digest = config_desc.get("digest")
        if not config_digest:
            raise UnsupportedMediaType("manifest has no config descriptor")
        blob = self._get_blob_bytes(id, config_digest)
        try:
            payload = json.loads(blob)
        except ValueError as exc:
            raise UnsupportedMediaType(f"config blob is not JSON: {exc}") from exc
        section = payload.get("config") or {}
        layers = tuple(layer["digest"] for layer in manifest.get("layers", []))
        return ImageConfig(
            env=tuple(section.get("Env") or ()),
            entrypoint=tuple(section["Entrypoint"]) if section.get("Entrypoint") else None,
            cmd=tuple(section["Cmd"]) if section.get("Cmd") else None,
            layer_digests=layers,
        )

    def _get_manifest(self, id: ContainerIdentifier, reference: str) -> tuple[dict, str]:
        resp = self._request(
            "GET", self._url(id, f"manifests/{reference}"), headers={"Accept": _MANIFEST_ACCEPT}
        )
        body = resp.content
        if DIGEST_RE.match(reference) and sha256_hexdigest(body) != reference:
            raise IntegrityError(f"manifest {reference} failed digest verification")
        media_type = resp.headers.get("Content-Type", "").split(";")[0].strip()
        try:
            payload = json.loads(body)
        except ValueError as exc:
            raise UnsupportedMediaType(f"manifest is not JSON: {exc}") from exc
        return payload, media_type or payload.get("mediaType", "")

    @staticmethod
    def _select_platform(index: dict, architecture: str, os_name: str) -> str:
        for entry in index.get("manifests", []):
            platform = entry.get("platform") or {}
            if platform.get("architecture") == architecture and platform.get("os", "linux") == os_name:
                return entry["digest"]
        raise NotFoundError(f"index has no {os_name}/{architecture} manifest")

    def _get_blob_bytes(self, id: ContainerIdentifier, digest: str) -> bytes:
        """Small-blob fetch with digest verification; mismatch is retried once fresh."""
        last_error = None
        for attempt in range(self.retry.attempts):
            if attempt:
                self._sleep(self.retry.delay(attempt - 1))
            resp = self._request("GET", self._url(id, f"blobs/{digest}"))
            body = resp.content
            if sha256_hexdigest(body) == digest:
                return body
            last_error = IntegrityError(f"blob {digest} failed digest verification")
            logger.debug("digest mismatch for %s (attempt %d)", digest, attempt + 1)
        raise last_error

    def fetch_layer(self, id: ContainerIdentifier, digest: str, dest: BinaryIO) -> int:
        """Stream a layer blob into ``dest``, verifying its digest.

        The stream is staged through a spooled temporary file so that
        ``dest`` only ever receives verified bytes. A short or corrupted
        stream is treated as transient and refetched; if the content still
        does not match after the retry budget, IntegrityError is raised.
        """
        mismatch = None
        for attempt in range(self.retry.attempts):
            if attempt:
                self._sleep(self.retry.delay(attempt - 1))
            resp = self._request("GET", self._url(id, f"blobs/{digest}"), stream=True)
            hasher = hashlib.sha256()
            count = 0
            with tempfile.SpooledTemporaryFile(max_size=32 * 1024 * 1024) as spool:
                try:
                    for chunk in resp.iter_content(chunk_size=65536):
                        hasher.update(chunk)
                        spool.write(chunk)
                        count += len(chunk)
                except requests.RequestException as exc:
                    logger.debug("stream broke for %s: %s", digest, exc)
                    mismatch = TransientError(f"layer stream failed: {exc}")
                    continue
                finally:
                    resp.close()
                if "sha256:" + hasher.hexdigest() != digest:
                    mismatch = IntegrityError(f"layer {digest} failed digest verification")
                    logger.debug("layer digest mismatch (attempt %d)", attempt + 1)
                    continue
                spool.seek(0)
                shutil.copyfileobj(spool, dest)
                return count
        raise mismatch if mismatch is not None else TransientError("layer fetch failed")
