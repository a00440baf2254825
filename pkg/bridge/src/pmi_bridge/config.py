"""Bridge configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class BridgeConfig:
    """One served model pair.

    ``vlm_id`` and ``lm_id`` are checkpoint identifiers (local paths or hub
    ids); both checkpoints must share one tokenizer vocabulary, which is
    verified by hash at startup. ``proxy_image_size`` is the pixel size the
    builtin solid "black"/"white" images are rendered at before the model's
    own preprocessor sees them.
    """

    vlm_id: str
    lm_id: str
    device: str = "cpu"
    port: int = 8400
    host: str = "127.0.0.1"
    image_dir: str | None = None
    proxy_image_size: tuple[int, int] = (224, 224)
    # Opt-in 8-bit approximate inference; off by default so served logprobs
    # stay deterministic across processes.
    int8: bool = False

    def __post_init__(self):
        self.proxy_image_size = tuple(int(x) for x in self.proxy_image_size)
        if len(self.proxy_image_size) != 2 or min(self.proxy_image_size) < 1:
            raise ValueError(f"bad proxy_image_size {self.proxy_image_size!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "BridgeConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**raw)
