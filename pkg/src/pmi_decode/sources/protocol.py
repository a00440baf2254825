"""Wire format for the remote model-source protocol.

HTTP/1.1 + JSON. Log-probabilities travel on the wire (never probabilities)
and are renormalized on receipt, so peers returning unnormalized values stay
usable and large vocabularies do not underflow. Endpoints:

    GET  /v1/info        -> session header (vocabulary hash/size/eos id,
                            capability flags)
    POST /v1/images      -> register {"id": ..., "png_base64": ...}; the
                            builtin ids "black"/"white" always pre-exist
    POST /v1/next_token  -> {"context": [int...], "image": id|null,
                            "want_embedding": bool} ->
                            {"logprobs": [float...], "embedding": [...]|null}

Both ends of the wire use the encode/decode pairs below, so the round trip
is identity on the semantic payload by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..core import ContextTokens, TokenDistribution
from ..errors import ProtocolError, SessionError

INFO_PATH = "/v1/info"
IMAGES_PATH = "/v1/images"
NEXT_TOKEN_PATH = "/v1/next_token"
# Optional extension some serving peers implement (text -> token ids).
TOKENIZE_PATH = "/v1/tokenize"


@dataclass(frozen=True)
class SessionInfo:
    """The /v1/info payload; checked once when a remote source opens."""

    vocab_hash: str
    vocab_size: int
    eos_id: int
    supports_images: bool
    supports_embeddings: bool

    def to_json(self) -> dict:
        return {
            "vocab_hash": self.vocab_hash,
            "vocab_size": self.vocab_size,
            "eos_id": self.eos_id,
            "supports_images": self.supports_images,
            "supports_embeddings": self.supports_embeddings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SessionInfo":
        try:
            return cls(
                vocab_hash=str(obj["vocab_hash"]),
                vocab_size=int(obj["vocab_size"]),
                eos_id=int(obj["eos_id"]),
                supports_images=bool(obj["supports_images"]),
                supports_embeddings=bool(obj["supports_embeddings"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ProtocolError(f"malformed session info: {err}", raw_body=obj) from err


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _loads(body: bytes):
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ProtocolError(f"payload is not valid JSON: {err}", raw_body=body) from err


def remote_query_encode(
    ctx: ContextTokens, image_id: str | None, want_embedding: bool
) -> bytes:
    """Serialize a next-token request body."""
    return _dumps(
        {
            "context": [int(t) for t in ctx],
            "image": image_id,
            "want_embedding": bool(want_embedding),
        }
    )


def remote_query_decode(body: bytes) -> tuple[ContextTokens, str | None, bool]:
    """Parse a next-token request body (the serving side of the wire)."""
    obj = _loads(body)
    try:
        ctx = tuple(int(t) for t in obj["context"])
        image_id = obj.get("image")
        if image_id is not None:
            image_id = str(image_id)
        return ctx, image_id, bool(obj.get("want_embedding", False))
    except (KeyError, TypeError, ValueError) as err:
        raise ProtocolError(f"malformed next-token request: {err}", raw_body=body) from err


def remote_response_encode(logprobs, embedding=None) -> bytes:
    """Serialize a next-token response body (the serving side of the wire)."""
    return _dumps(
        {
            "logprobs": [float(x) for x in logprobs],
            "embedding": None if embedding is None else [float(x) for x in embedding],
        }
    )


def remote_response_decode(
    body: bytes, vocab_size: int
) -> tuple[TokenDistribution, np.ndarray | None]:
    """Parse a next-token response and renormalize the transported logprobs.

    A length mismatch against the session's vocabulary size is fatal for the
    session, not a per-request recoverable.
    """
    obj = _loads(body)
    if not isinstance(obj, dict) or "logprobs" not in obj:
        raise ProtocolError("response carries no 'logprobs' field", raw_body=body)
    logprobs = obj["logprobs"]
    if not isinstance(logprobs, list):
        raise ProtocolError("'logprobs' is not a list", raw_body=body)
    if len(logprobs) != vocab_size:
        raise SessionError(
            f"peer returned {len(logprobs)} logprobs for a vocabulary of size "
            f"{vocab_size}"
        )
    try:
        values = [float(x) for x in logprobs]
    except (TypeError, ValueError) as err:
        raise ProtocolError(f"non-numeric logprob: {err}", raw_body=body) from err
    arr = np.asarray(values, dtype=np.float64)
    if np.isnan(arr).any() or (arr == np.inf).any():
        raise ProtocolError("logprobs contain NaN or +inf", raw_body=body)
    # -inf marks impossible tokens; renormalization maps it to probability 0.
    finite = np.isfinite(arr)
    if not finite.any():
        raise ProtocolError("all logprobs are -inf", raw_body=body)
    shifted = np.where(finite, arr - arr[finite].max(), -np.inf)
    exp = np.where(finite, np.exp(shifted), 0.0)
    dist = TokenDistribution(exp / exp.sum())
    emb = obj.get("embedding")
    if emb is not None:
        try:
            emb = np.asarray([float(x) for x in emb], dtype=np.float64)
        except (TypeError, ValueError) as err:
            raise ProtocolError(f"malformed embedding: {err}", raw_body=body) from err
    return dist, emb


def image_register_encode(image_id: str, png_base64: str) -> bytes:
    return _dumps({"id": image_id, "png_base64": png_base64})


def image_register_decode(body: bytes) -> tuple[str, str]:
    obj = _loads(body)
    try:
        return str(obj["id"]), str(obj["png_base64"])
    except (KeyError, TypeError) as err:
        raise ProtocolError(f"malformed image registration: {err}", raw_body=body) from err
