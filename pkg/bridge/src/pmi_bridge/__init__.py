"""Serve a vision-language / text-only model pair behind the pmi-decode wire
protocol, so the engine can drive real checkpoints without linking a model
runtime."""

from .adapters import CausalLMAdapter, ModelAdapter, VisionEncoderDecoderAdapter, load_adapter
from .config import BridgeConfig
from .images import ImageRegistry
from .server import Bridge, build_app, serve
from .vocab import vocab_hash, vocab_payload

__version__ = "0.1.0"
