"""Image registry: builtin proxy images plus anything registered over the wire."""

from __future__ import annotations

import base64
import io
import threading
from pathlib import Path

from PIL import Image

LOADABLE = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class ImageRegistry:
    """id -> RGB image. The reserved ids "black" and "white" always exist,
    rendered as solid fills at the configured proxy size."""

    def __init__(self, proxy_size: tuple[int, int], image_dir: str | None = None):
        self._lock = threading.Lock()
        self._images: dict[str, Image.Image] = {}
        self.proxy_size = proxy_size
        self._images["black"] = Image.new("RGB", proxy_size, (0, 0, 0))
        self._images["white"] = Image.new("RGB", proxy_size, (255, 255, 255))
        if image_dir:
            for path in sorted(Path(image_dir).iterdir()):
                if path.suffix.lower() in LOADABLE:
                    self._images[path.stem] = Image.open(path).convert("RGB")

    def register(self, image_id: str, png_base64: str):
        if not image_id:
            raise ValueError("image id must be non-empty")
        raw = base64.b64decode(png_base64)
        image = Image.open(io.BytesIO(raw)).convert("RGB")
        with self._lock:
            self._images[image_id] = image

    def get(self, image_id: str) -> Image.Image:
        with self._lock:
            image = self._images.get(image_id)
        if image is None:
            raise KeyError(f"unknown image id {image_id!r}; register it via /v1/images")
        return image

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._images)
