"""Fidelity check: logprobs over the wire must equal direct in-process calls.

Starts the server in a background thread, replays a batch of prompts through
HTTP against both roles, and compares each response to the adapter's own
answer. Passes when every entry agrees within the stated tolerance.
"""

from __future__ import annotations

import logging
import socket
import threading
import time

import numpy as np
import requests

from .config import BridgeConfig
from .server import Bridge, build_app

log = logging.getLogger("pmi_bridge")

DEFAULT_TOLERANCE = 1e-4


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServerThread:
    """uvicorn in a daemon thread, for the selftest and for tests."""

    def __init__(self, app, host="127.0.0.1", port=None):
        import uvicorn

        self.port = port or free_port()
        self.host = host
        config = uvicorn.Config(app, host=host, port=self.port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def base(self) -> str:
        return f"http://{self.host}:{self.port}"

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 30
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start within 30s")
            time.sleep(0.05)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


def selftest_prompts(bridge: Bridge, count: int) -> list[list[int]]:
    """Deterministic token contexts of varying length inside the vocabulary."""
    rng = np.random.default_rng(20240001)
    size = bridge.lm.vocab_size
    return [
        [int(t) for t in rng.integers(0, size, size=int(rng.integers(1, 9)))]
        for _ in range(count)
    ]


def run_selftest(
    config: BridgeConfig, prompts: int = 20, tolerance: float = DEFAULT_TOLERANCE
) -> bool:
    bridge = Bridge(config)
    app = build_app(bridge)
    failures = 0
    checked = 0
    start = time.time()
    with ServerThread(app) as server:
        session = requests.Session()
        for ctx in selftest_prompts(bridge, prompts):
            for role, image_id in (("lm", None), ("vlm", "black"), ("vlm", "white")):
                adapter = bridge.role(role)
                resp = session.post(
                    f"{server.base}/{role}/v1/next_token",
                    json={"context": ctx, "image": image_id, "want_embedding": False},
                    timeout=60,
                )
                resp.raise_for_status()
                wire = np.asarray(resp.json()["logprobs"], dtype=np.float64)
                image = None if image_id is None else bridge.images.get(image_id)
                direct, _ = adapter.next_logprobs(ctx, image)
                gap = float(np.max(np.abs(wire - direct)))
                checked += 1
                if gap > tolerance:
                    failures += 1
                    log.error(
                        "selftest mismatch: role=%s ctx=%s image=%s max|gap|=%.3g",
                        role,
                        ctx,
                        image_id,
                        gap,
                    )
    elapsed = time.time() - start
    print(
        f"selftest: {checked} wire/direct comparisons, {failures} failures, "
        f"tolerance {tolerance:g}, {elapsed:.1f}s"
    )
    return failures == 0
