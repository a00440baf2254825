"""Bridge CLI: serve a checkpoint pair, or run the wire-fidelity selftest."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import BridgeConfig
from .selftest import DEFAULT_TOLERANCE, run_selftest


def build_config(args) -> BridgeConfig:
    if args.config:
        config = BridgeConfig.from_file(args.config)
    else:
        if not (args.vlm and args.lm):
            raise SystemExit("provide --config or both --vlm and --lm")
        config = BridgeConfig(vlm_id=args.vlm, lm_id=args.lm)
    if args.vlm:
        config.vlm_id = args.vlm
    if args.lm:
        config.lm_id = args.lm
    if args.port:
        config.port = args.port
    if args.device:
        config.device = args.device
    if args.image_dir:
        config.image_dir = args.image_dir
    if args.proxy_image_size:
        w, h = (int(x) for x in args.proxy_image_size.split("x"))
        config.proxy_image_size = (w, h)
    if args.int8:
        config.int8 = True
    return config


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PMI_BRIDGE_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = argparse.ArgumentParser(
        prog="pmi-bridge",
        description="Serve a vision-language / text-only checkpoint pair behind "
        "the pmi-decode wire protocol.",
    )
    parser.add_argument("--config", help="BridgeConfig JSON file")
    parser.add_argument("--vlm", help="image-conditioned checkpoint id or path")
    parser.add_argument("--lm", help="text-only checkpoint id or path")
    parser.add_argument("--port", type=int)
    parser.add_argument("--device", help="cpu, cuda, cuda:0, ...")
    parser.add_argument("--image-dir", help="directory of images preloaded by stem")
    parser.add_argument("--proxy-image-size", help="WxH for the builtin solid images")
    parser.add_argument("--int8", action="store_true", help="opt-in 8-bit inference")
    parser.add_argument(
        "--selftest",
        action="store_true",
        help="compare wire logprobs against direct in-process calls and exit",
    )
    parser.add_argument("--selftest-prompts", type=int, default=20)
    parser.add_argument("--selftest-tolerance", type=float, default=DEFAULT_TOLERANCE)
    parser.add_argument(
        "--dump-vocab",
        metavar="PATH",
        help="write the served vocabulary (engine file schema) and exit",
    )
    args = parser.parse_args(argv)
    config = build_config(args)

    if args.dump_vocab:
        from .adapters import load_adapter
        from .vocab import vocab_payload

        adapter = load_adapter(config.lm_id, config.device)
        with open(args.dump_vocab, "w", encoding="utf-8") as fh:
            json.dump(vocab_payload(adapter.tokenizer), fh, ensure_ascii=False)
        print(f"wrote vocabulary to {args.dump_vocab}")
        return 0

    if args.selftest:
        ok = run_selftest(config, args.selftest_prompts, args.selftest_tolerance)
        return 0 if ok else 1

    from .server import serve

    serve(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
