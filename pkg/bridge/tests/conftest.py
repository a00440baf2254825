"""Build a tiny local checkpoint pair once per session.

No hub access is needed: a word-level tokenizer plus randomly initialized
1-layer models, saved to disk and loaded back through the same transformers
entry points a real checkpoint pair would use.
"""

from __future__ import annotations

import pytest
import torch

WORDS = [
    "<pad>", "<s>", "</s>",
    "Question", "Answer", ":", "?", ".",
    "what", "color", "is", "the", "square", "shape", "in", "picture",
    "red", "blue", "green", "yellow", "purple", "orange", "white", "black",
    "a", "an", "it", "this", "that", "big", "small", "bright", "dark",
]
EOS_ID = 2


def build_tokenizer(path):
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import PreTrainedTokenizerFast

    vocab = {w: i for i, w in enumerate(WORDS)}
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<pad>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, pad_token="<pad>", bos_token="<s>", eos_token="</s>"
    )
    fast.save_pretrained(str(path))


def build_lm(path):
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=len(WORDS),
        n_layer=1,
        n_embd=32,
        n_head=2,
        n_positions=64,
        bos_token_id=1,
        eos_token_id=EOS_ID,
    )
    GPT2LMHeadModel(config).save_pretrained(str(path))


def build_ved(path):
    from transformers import (
        GPT2Config,
        VisionEncoderDecoderConfig,
        VisionEncoderDecoderModel,
        ViTConfig,
        ViTImageProcessor,
    )

    torch.manual_seed(4321)
    encoder = ViTConfig(
        image_size=32,
        patch_size=16,
        hidden_size=32,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=64,
    )
    decoder = GPT2Config(
        vocab_size=len(WORDS),
        n_layer=1,
        n_embd=32,
        n_head=2,
        n_positions=64,
        bos_token_id=1,
        eos_token_id=EOS_ID,
        add_cross_attention=True,
    )
    config = VisionEncoderDecoderConfig.from_encoder_decoder_configs(encoder, decoder)
    config.decoder_start_token_id = 1
    config.pad_token_id = 0
    VisionEncoderDecoderModel(config=config).save_pretrained(str(path))
    ViTImageProcessor(size={"height": 32, "width": 32}).save_pretrained(str(path))


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("checkpoints")
    lm_dir = root / "tiny_lm"
    ved_dir = root / "tiny_ved"
    build_tokenizer(lm_dir)
    build_tokenizer(ved_dir)
    build_lm(lm_dir)
    build_ved(ved_dir)
    return {"lm": str(lm_dir), "vlm": str(ved_dir)}


@pytest.fixture(scope="session")
def bridge_config(checkpoints):
    from pmi_bridge import BridgeConfig

    return BridgeConfig(
        vlm_id=checkpoints["vlm"],
        lm_id=checkpoints["lm"],
        proxy_image_size=(32, 32),
    )


@pytest.fixture(scope="session")
def bridge(bridge_config):
    from pmi_bridge import Bridge

    return Bridge(bridge_config)


@pytest.fixture(scope="session")
def app(bridge):
    from pmi_bridge import build_app

    return build_app(bridge)


@pytest.fixture()
def client(app):
    from fastapi.testclient import TestClient

    return TestClient(app)
