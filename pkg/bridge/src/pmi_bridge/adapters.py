"""Checkpoint adapters: one next-token logprob surface over real models.

Two families are supported out of the box and detected from the checkpoint
config: plain causal language models (the text-only role) and
vision-encoder-decoder models (the image-conditioned role). Adding a family
means implementing ``_logits_and_hidden`` for it.

Inference is deterministic: eval mode, no sampling, no grad, one request at
a time per model (the server serializes on ``lock``).
"""

from __future__ import annotations

import logging
import threading

import numpy as np
import torch
from PIL import Image

log = logging.getLogger("pmi_bridge")


class AdapterError(RuntimeError):
    """Per-request failure; the server reports it, never crashes."""


class ModelAdapter:
    supports_images = False

    def __init__(self, model_id: str, device: str = "cpu", int8: bool = False):
        from transformers import AutoTokenizer

        self.model_id = model_id
        self.device = device
        self.int8 = int8
        self.lock = threading.Lock()
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.vocab_size = len(self.tokenizer)
        self.eos_id = self.tokenizer.eos_token_id
        self.model = self._load_model()
        self.model.eval()

    def _load_kwargs(self) -> dict:
        kwargs: dict = {}
        if self.int8:
            # LLM.int8-style quantized inference; needs bitsandbytes.
            try:
                from transformers import BitsAndBytesConfig

                kwargs["quantization_config"] = BitsAndBytesConfig(load_in_8bit=True)
            except Exception as err:  # pragma: no cover - optional dependency
                raise AdapterError(
                    f"8-bit inference requested but unavailable: {err}"
                ) from err
        return kwargs

    def _load_model(self):
        raise NotImplementedError

    def _logits_and_hidden(self, ctx: list[int], image) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (final-position logits, final-position hidden state)."""
        raise NotImplementedError

    def next_logprobs(
        self, ctx: list[int], image: Image.Image | None = None, want_embedding: bool = False
    ) -> tuple[np.ndarray, np.ndarray | None]:
        if not ctx:
            raise AdapterError("context must be non-empty")
        if any(not 0 <= t < self.vocab_size for t in ctx):
            raise AdapterError(f"context id outside vocabulary of size {self.vocab_size}")
        if image is not None and not self.supports_images:
            raise AdapterError(f"model {self.model_id} is text-only")
        with self.lock, torch.no_grad():
            logits, hidden = self._logits_and_hidden(list(ctx), image)
            # Models often pad their embedding matrix past the tokenizer; the
            # session vocabulary is the tokenizer's, so slice before softmax.
            logits = logits[: self.vocab_size].to(torch.float32)
            logprobs = torch.log_softmax(logits, dim=-1).cpu().numpy()
            embedding = None
            if want_embedding:
                embedding = hidden.to(torch.float32).cpu().numpy()
        return logprobs, embedding

    def tokenize(self, text: str) -> list[int]:
        return list(self.tokenizer(text, add_special_tokens=False)["input_ids"])


class CausalLMAdapter(ModelAdapter):
    """Text-only role: any AutoModelForCausalLM checkpoint."""

    supports_images = False

    def _load_model(self):
        from transformers import AutoModelForCausalLM

        model = AutoModelForCausalLM.from_pretrained(self.model_id, **self._load_kwargs())
        return model.to(self.device)

    def _logits_and_hidden(self, ctx, image):
        ids = torch.tensor([ctx], dtype=torch.long, device=self.device)
        out = self.model(input_ids=ids, output_hidden_states=True)
        return out.logits[0, -1], out.hidden_states[-1][0, -1]


class VisionEncoderDecoderAdapter(ModelAdapter):
    """Image-conditioned role: VisionEncoderDecoderModel checkpoints.

    The decoder start token (from the model config) is prepended to the
    engine's context, so the wire context stays a plain token sequence.
    """

    supports_images = True

    def __init__(self, model_id: str, device: str = "cpu", int8: bool = False):
        super().__init__(model_id, device, int8)
        from transformers import AutoImageProcessor

        self.processor = AutoImageProcessor.from_pretrained(model_id)
        start = self.model.config.decoder_start_token_id
        if start is None:
            start = self.tokenizer.bos_token_id
        if start is None:
            raise AdapterError(
                f"{model_id}: no decoder_start_token_id or bos token configured"
            )
        self.decoder_start = int(start)

    def _load_model(self):
        from transformers import VisionEncoderDecoderModel

        model = VisionEncoderDecoderModel.from_pretrained(
            self.model_id, **self._load_kwargs()
        )
        return model.to(self.device)

    def _logits_and_hidden(self, ctx, image):
        if image is None:
            raise AdapterError(
                "the image-conditioned role needs an image id on every query"
            )
        pixel_values = self.processor(images=image, return_tensors="pt").pixel_values
        ids = torch.tensor([[self.decoder_start] + ctx], dtype=torch.long, device=self.device)
        out = self.model(
            pixel_values=pixel_values.to(self.device),
            decoder_input_ids=ids,
            output_hidden_states=True,
        )
        return out.logits[0, -1], out.decoder_hidden_states[-1][0, -1]


def load_adapter(model_id: str, device: str = "cpu", int8: bool = False) -> ModelAdapter:
    """Pick the adapter family from the checkpoint's config."""
    from transformers import AutoConfig

    cfg = AutoConfig.from_pretrained(model_id)
    if cfg.model_type == "vision-encoder-decoder":
        adapter = VisionEncoderDecoderAdapter(model_id, device, int8)
    else:
        adapter = CausalLMAdapter(model_id, device, int8)
    log.info(
        "loaded %s as %s (vocab %d, images=%s)",
        model_id,
        type(adapter).__name__,
        adapter.vocab_size,
        adapter.supports_images,
    )
    return adapter
