"""Vocabulary extraction and the wire-contract content hash.

The hash must match what the decoding engine computes for the same token
list: SHA-256 of the canonical JSON {"eos_id": ..., "tokens": [...]} with
sorted keys, compact separators, UTF-8, non-ASCII unescaped (see the engine
README's external-interfaces section).
"""

from __future__ import annotations

import hashlib
import json


def tokenizer_tokens(tokenizer) -> list[str]:
    """Dense id -> token-string table for a tokenizer.

    Ids the tokenizer leaves unmapped are filled with unique placeholders so
    the table stays dense and collision-free.
    """
    size = len(tokenizer)
    tokens = tokenizer.convert_ids_to_tokens(list(range(size)))
    seen: set[str] = set()
    out: list[str] = []
    for i, tok in enumerate(tokens):
        if tok is None or tok in seen:
            tok = f"<unused_{i}>"
        seen.add(tok)
        out.append(tok)
    return out


def vocab_payload(tokenizer) -> dict:
    eos_id = tokenizer.eos_token_id
    if eos_id is None:
        raise ValueError("tokenizer declares no eos token; the protocol needs one")
    return {"tokens": tokenizer_tokens(tokenizer), "eos_id": int(eos_id)}


def vocab_hash(payload: dict) -> str:
    canonical = json.dumps(
        payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
