"""HTTP surface: the engine wire protocol, one endpoint prefix per role.

The text-only model is served under /lm and the image-conditioned model
under /vlm; each prefix carries the full protocol (/v1/info, /v1/images,
/v1/next_token) plus two documented extensions: /v1/tokenize (text to ids
with the served tokenizer) and /v1/vocab (the full token table, in the
engine's vocabulary file schema).

Responses depend only on the request payload and the registered images;
per-request model errors come back as JSON error bodies, never a crash.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .adapters import AdapterError, ModelAdapter, load_adapter
from .config import BridgeConfig
from .images import ImageRegistry
from .vocab import vocab_hash, vocab_payload

log = logging.getLogger("pmi_bridge")


class Bridge:
    """Loaded model pair plus shared image registry."""

    def __init__(self, config: BridgeConfig):
        self.config = config
        self.lm = load_adapter(config.lm_id, config.device, config.int8)
        self.vlm = load_adapter(config.vlm_id, config.device, config.int8)
        if not self.vlm.supports_images:
            raise SystemExit(
                f"vlm_id {config.vlm_id} loaded as a text-only model; the "
                f"image-conditioned role needs a vision checkpoint"
            )
        lm_vocab = vocab_payload(self.lm.tokenizer)
        vlm_vocab = vocab_payload(self.vlm.tokenizer)
        if vocab_hash(lm_vocab) != vocab_hash(vlm_vocab):
            raise SystemExit(
                "checkpoint pair does not share a tokenizer vocabulary: "
                f"{config.lm_id} and {config.vlm_id} hash differently"
            )
        self.vocab = lm_vocab
        self.vocab_hash = vocab_hash(lm_vocab)
        self.images = ImageRegistry(config.proxy_image_size, config.image_dir)

    def role(self, name: str) -> ModelAdapter:
        return self.lm if name == "lm" else self.vlm


def build_app(bridge: Bridge) -> FastAPI:
    app = FastAPI(title="pmi-bridge")
    app.state.bridge = bridge
    app.state.counters = {"lm": 0, "vlm": 0}

    def info(role: str, adapter: ModelAdapter) -> dict:
        return {
            "vocab_hash": bridge.vocab_hash,
            "vocab_size": adapter.vocab_size,
            "eos_id": int(adapter.eos_id),
            "supports_images": adapter.supports_images,
            "supports_embeddings": True,
            # Extra metadata; protocol clients ignore unknown fields.
            "model_id": adapter.model_id,
            "proxy_image_size": list(bridge.config.proxy_image_size),
            "role": role,
        }

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    for role_name in ("lm", "vlm"):
        _mount_role(app, bridge, role_name, info, error)
    return app


def _mount_role(app: FastAPI, bridge: Bridge, role_name: str, info, error):
    adapter = bridge.role(role_name)
    prefix = f"/{role_name}/v1"

    @app.get(f"{prefix}/info")
    def get_info():
        return info(role_name, adapter)

    @app.get(f"{prefix}/vocab")
    def get_vocab():
        return bridge.vocab

    @app.post(f"{prefix}/images")
    async def post_images(request: Request):
        body = await request.json()
        try:
            bridge.images.register(str(body["id"]), str(body["png_base64"]))
        except (KeyError, ValueError, TypeError) as err:
            return error(400, f"bad image registration: {err}")
        return {"ok": True}

    @app.post(f"{prefix}/tokenize")
    async def post_tokenize(request: Request):
        body = await request.json()
        if "text" not in body:
            return error(400, "tokenize needs a 'text' field")
        return {"ids": adapter.tokenize(str(body["text"]))}

    @app.post(f"{prefix}/next_token")
    async def post_next_token(request: Request):
        try:
            body = await request.json()
        except Exception:
            return error(400, "body is not valid JSON")
        try:
            ctx = [int(t) for t in body["context"]]
            image_id = body.get("image")
            want_embedding = bool(body.get("want_embedding", False))
        except (KeyError, TypeError, ValueError) as err:
            return error(400, f"malformed next-token request: {err}")
        image = None
        if image_id is not None:
            try:
                image = bridge.images.get(str(image_id))
            except KeyError as err:
                return error(400, str(err))
        try:
            logprobs, embedding = adapter.next_logprobs(
                ctx, image, want_embedding=want_embedding
            )
        except AdapterError as err:
            return error(400, str(err))
        except Exception as err:  # model hiccup: report, never crash
            log.exception("inference failed")
            return error(500, f"inference failed: {err}")
        app.state.counters[role_name] += 1
        return {
            "logprobs": [float(x) for x in logprobs],
            "embedding": None if embedding is None else [float(x) for x in embedding],
        }


def serve(config: BridgeConfig):  # pragma: no cover - exercised via selftest
    import uvicorn

    bridge = Bridge(config)
    app = build_app(bridge)
    log.info(
        "serving %s (+%s) on %s:%d", config.vlm_id, config.lm_id, config.host, config.port
    )
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
