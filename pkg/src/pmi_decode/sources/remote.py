"""HTTP client for the remote model-source protocol.

The session header (vocabulary hash, size, eos id) is checked once at open so
model/vocabulary mismatches fail fast instead of corrupting a run. Transport
failures carry retry metadata; malformed payloads carry the raw body.
"""

from __future__ import annotations

import base64
import time

import requests

from ..core import ContextTokens, ImageContext, Vocabulary
from ..errors import CapabilityError, ProtocolError, SessionError, TransportError
from . import protocol
from .base import ModelSource


class RemoteSource(ModelSource):
    """Client for one protocol endpoint (one model role per endpoint).

    Declared serial: one HTTP session per source, so the engine keeps
    queries sequential rather than sharing the session across threads.
    """

    serial_only = True

    def __init__(
        self,
        endpoint: str,
        vocabulary: Vocabulary,
        *,
        label: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        retry_wait: float = 0.2,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.vocabulary = vocabulary
        self.label = label or self.endpoint
        self.timeout = timeout
        self.retries = retries
        self.retry_wait = retry_wait
        self._session = requests.Session()
        self._info = self._open()

    def _open(self) -> protocol.SessionInfo:
        info = protocol.SessionInfo.from_json(
            self._request("GET", protocol.INFO_PATH, expect_json=True)
        )
        expected = self.vocabulary.content_hash()
        if info.vocab_hash != expected:
            raise SessionError(
                f"{self.label}: peer vocabulary hash {info.vocab_hash[:12]}... does "
                f"not match local {expected[:12]}..."
            )
        if info.vocab_size != self.vocabulary.size or info.eos_id != self.vocabulary.eos_id:
            raise SessionError(
                f"{self.label}: peer reports size={info.vocab_size} eos={info.eos_id}, "
                f"local vocabulary has size={self.vocabulary.size} "
                f"eos={self.vocabulary.eos_id}"
            )
        return info

    def _request(self, method: str, path: str, body: bytes | None = None, expect_json=False):
        url = self.endpoint + path
        last_err = None
        attempts = 0
        for attempt in range(self.retries + 1):
            attempts = attempt + 1
            try:
                resp = self._session.request(
                    method,
                    url,
                    data=body,
                    headers={"Content-Type": "application/json"} if body else None,
                    timeout=self.timeout,
                )
            except requests.RequestException as err:
                last_err = err
                if attempt < self.retries:
                    time.sleep(self.retry_wait * (attempt + 1))
                continue
            if resp.status_code >= 500:
                last_err = ProtocolError(
                    f"{url} answered HTTP {resp.status_code}", raw_body=resp.content
                )
                if attempt < self.retries:
                    time.sleep(self.retry_wait * (attempt + 1))
                continue
            if resp.status_code >= 400:
                raise ProtocolError(
                    f"{url} answered HTTP {resp.status_code}", raw_body=resp.content
                )
            if expect_json:
                try:
                    return resp.json()
                except ValueError as err:
                    raise ProtocolError(
                        f"{url} answered non-JSON body", raw_body=resp.content
                    ) from err
            return resp.content
        if isinstance(last_err, ProtocolError):
            raise last_err
        raise TransportError(
            f"cannot reach {url}: {last_err}",
            endpoint=self.endpoint,
            attempts=attempts,
            retryable=True,
        )

    @property
    def name(self) -> str:
        return self.label

    @property
    def vocab_size(self) -> int:
        return self.vocabulary.size

    @property
    def supports_images(self) -> bool:
        return self._info.supports_images

    @property
    def supports_embeddings(self) -> bool:
        return self._info.supports_embeddings

    @property
    def info(self) -> protocol.SessionInfo:
        return self._info

    def next_distribution(self, ctx: ContextTokens, image: ImageContext | None = None):
        dist, _ = self._query(ctx, image, want_embedding=False)
        return dist

    def next_with_embedding(self, ctx: ContextTokens, image: ImageContext | None = None):
        if not self.supports_embeddings:
            raise CapabilityError(f"source {self.name} does not support embeddings")
        dist, emb = self._query(ctx, image, want_embedding=True)
        if emb is None:
            raise ProtocolError(f"{self.name}: peer omitted the requested embedding")
        return dist, emb

    def _query(self, ctx, image, want_embedding):
        self._check_image_arg(image)
        body = protocol.remote_query_encode(
            ctx, None if image is None else image.id, want_embedding
        )
        raw = self._request("POST", protocol.NEXT_TOKEN_PATH, body=body)
        dist, emb = protocol.remote_response_decode(raw, self.vocab_size)
        return self._checked(dist), emb

    def register_image(self, image_id: str, png_bytes: bytes):
        """Upload an image so later queries can reference it by id."""
        body = protocol.image_register_encode(
            image_id, base64.b64encode(png_bytes).decode("ascii")
        )
        self._request("POST", protocol.IMAGES_PATH, body=body)

    def tokenize(self, text: str) -> ContextTokens:
        """Use the peer's tokenizer via the optional /v1/tokenize extension."""
        try:
            obj = self._request(
                "POST",
                protocol.TOKENIZE_PATH,
                body=protocol._dumps({"text": text}),
                expect_json=True,
            )
        except ProtocolError as err:
            raise CapabilityError(
                f"source {self.name} does not serve {protocol.TOKENIZE_PATH}"
            ) from err
        return tuple(int(t) for t in obj["ids"])
