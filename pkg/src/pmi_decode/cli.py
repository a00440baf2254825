"""Operator surface: run decodes, compare scorers, sweep hyperparameters,
replay traces, and score outputs.

Everything is JSON-lines in and out so golden files stay diffable. Exit
codes: 0 ok, 1 config/usage error, 2 source or transport error, 3 internal
invariant violation. The PMI_DECODE_LOG environment variable sets log
verbosity (DEBUG, INFO, ...).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import DecodeConfig, Vocabulary, image_from_id
from .decoding import PromptPair, SourceBundle, decode
from .errors import (
    ConfigError,
    EngineError,
    InvariantViolation,
    SourceError,
    UsageError,
)
from .marginal import sample_image_pool
from .metrics import metrics_report
from .sources import (
    ModelSource,
    ModelSourceDescriptor,
    RecordingSource,
    RemoteSource,
    load_table_model,
    load_trace,
    write_trace,
)

log = logging.getLogger("pmi_decode")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOURCE = 2
EXIT_INTERNAL = 3

SWEEPABLE = ("alpha", "tau", "marginal_count")


@dataclass(frozen=True)
class RunConfig:
    """One decode run, fully specified; round-trips losslessly through JSON."""

    decode: DecodeConfig
    text_source: ModelSourceDescriptor
    inputs: str
    output: str
    vlm_source: ModelSourceDescriptor | None = None
    vocab: str | None = None
    prompt_template: str | None = None
    seed: int = 0
    marginal: dict | None = None
    embedding_role: str = "text"

    def to_json(self) -> dict:
        return {
            "decode": self.decode.to_json(),
            "text_source": self.text_source.to_json(),
            "vlm_source": None if self.vlm_source is None else self.vlm_source.to_json(),
            "vocab": self.vocab,
            "prompt_template": self.prompt_template,
            "inputs": self.inputs,
            "output": self.output,
            "seed": self.seed,
            "marginal": self.marginal,
            "embedding_role": self.embedding_role,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {
            "decode",
            "text_source",
            "vlm_source",
            "vocab",
            "prompt_template",
            "inputs",
            "output",
            "seed",
            "marginal",
            "embedding_role",
        }
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        for required in ("decode", "text_source", "inputs", "output"):
            if required not in obj:
                raise ConfigError(f"run config is missing {required!r}")
        vlm = obj.get("vlm_source")
        return cls(
            decode=DecodeConfig.from_json(obj["decode"]),
            text_source=ModelSourceDescriptor.from_json(obj["text_source"]),
            vlm_source=None if vlm is None else ModelSourceDescriptor.from_json(vlm),
            vocab=obj.get("vocab"),
            prompt_template=obj.get("prompt_template"),
            inputs=obj["inputs"],
            output=obj["output"],
            seed=int(obj.get("seed", 0)),
            marginal=obj.get("marginal"),
            embedding_role=obj.get("embedding_role", "text"),
        )

def config_file_hash(path: str | Path) -> str:
    """Audit anchor embedded in every output record: hash of the config file
    exactly as written (runtime overrides like --output are recorded in the
    records themselves)."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}")
    cfg = RunConfig.from_json(raw)
    # Relative paths inside the config resolve against the config's directory.
    base = path.parent

    def resolved(uri: str | None) -> str | None:
        if uri is None or "://" in uri:
            return uri
        p = Path(uri)
        return str(p if p.is_absolute() else base / p)

    return RunConfig(
        decode=cfg.decode,
        text_source=_resolve_descriptor(cfg.text_source, resolved),
        vlm_source=None
        if cfg.vlm_source is None
        else _resolve_descriptor(cfg.vlm_source, resolved),
        vocab=resolved(cfg.vocab),
        prompt_template=cfg.prompt_template,
        inputs=resolved(cfg.inputs),
        output=resolved(cfg.output),
        seed=cfg.seed,
        marginal=cfg.marginal,
        embedding_role=cfg.embedding_role,
    )


def _resolve_descriptor(desc: ModelSourceDescriptor, resolved) -> ModelSourceDescriptor:
    return ModelSourceDescriptor(
        kind=desc.kind,
        uri=resolved(desc.uri),
        supports_images=desc.supports_images,
        supports_embeddings=desc.supports_embeddings,
    )


# ---------------------------------------------------------------------------
# Prompt templates


def load_template(spec: str | None) -> dict | None:
    """Resolve a template spec: builtin:<name>, a .json path, or inline text."""
    if spec is None:
        return None
    if spec.startswith("builtin:"):
        name = spec[len("builtin:") :]
        ref = resources.files("pmi_decode").joinpath("templates", f"{name}.json")
        if not ref.is_file():
            raise ConfigError(f"no builtin template named {name!r}")
        return json.loads(ref.read_text(encoding="utf-8"))
    if spec.endswith(".json"):
        p = Path(spec)
        if not p.exists():
            raise ConfigError(f"template file not found: {spec}")
        return json.loads(p.read_text(encoding="utf-8"))
    return {"text": spec, "vlm": spec}


def render_template(template: dict, record: dict) -> tuple[str, str]:
    try:
        text = template["text"].format_map(record)
        vlm = template.get("vlm", template["text"]).format_map(record)
    except KeyError as err:
        raise ConfigError(f"input record is missing template field {err}")
    return text, vlm


# ---------------------------------------------------------------------------
# Source opening


def open_source(
    desc: ModelSourceDescriptor, vocabulary: Vocabulary | None, label: str
) -> ModelSource:
    if desc.kind == "table":
        return load_table_model(desc.uri, label=label)
    if desc.kind == "trace":
        return load_trace(desc.uri, vocabulary, label=label)
    return RemoteSource(desc.uri, _require_vocab(vocabulary, desc), label=label)


def _require_vocab(vocabulary: Vocabulary | None, desc) -> Vocabulary:
    if vocabulary is None:
        raise ConfigError(
            f"source {desc.uri} of kind {desc.kind!r} needs a 'vocab' file in the "
            f"run config"
        )
    return vocabulary


def build_bundle(cfg: RunConfig) -> tuple[SourceBundle, Vocabulary]:
    vocabulary = None
    if cfg.vocab is not None:
        vocabulary = Vocabulary.from_json(
            json.loads(Path(cfg.vocab).read_text(encoding="utf-8"))
        )
    text = open_source(cfg.text_source, vocabulary, label="text")
    if vocabulary is None:
        vocabulary = getattr(text, "vocabulary", None)
        if vocabulary is None:
            raise ConfigError(
                "run config needs a 'vocab' file when the text source does not "
                "embed token strings"
            )
    vlm = None
    if cfg.vlm_source is not None:
        vlm = open_source(cfg.vlm_source, vocabulary, label="vlm")
    bundle = SourceBundle(
        vocabulary=vocabulary, text=text, vlm=vlm, embedding_role=cfg.embedding_role
    )
    if cfg.decode.scorer in ("vlis", "naive_ensemble", "vlm_only") and vlm is None:
        raise ConfigError(f"scorer {cfg.decode.scorer!r} needs a vlm_source")
    return bundle, vocabulary


def resolve_marginal_images(cfg: RunConfig) -> DecodeConfig:
    """Apply the config's marginal block (scheme/pool/count) to the decode config."""
    block = cfg.marginal
    if not block:
        return cfg.decode
    scheme = block.get("scheme", "predefined")
    if scheme == "predefined":
        images = tuple(image_from_id(i) for i in block.get("images", ["black", "white"]))
        return cfg.decode.with_(marginal_images=images)
    if scheme == "random_sample":
        spec = sample_image_pool(
            block["pool_dir"], int(block["count"]), seed=cfg.seed
        )
        return cfg.decode.with_(marginal_images=spec.images)
    raise ConfigError(f"unknown marginal scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Record handling


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: line {lineno}: {err.msg}")
    return out


def dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def resolve_prompt(
    record: dict, template: dict | None, bundle: SourceBundle
) -> PromptPair:
    if "prompt_tokens" in record:
        text_ids = tuple(int(t) for t in record["prompt_tokens"])
        vlm_ids = tuple(int(t) for t in record.get("vlm_prompt_tokens", record["prompt_tokens"]))
        return PromptPair(text=text_ids, vlm=vlm_ids)
    if template is None:
        raise ConfigError(
            "input record has no prompt_tokens and the run config names no "
            "prompt_template"
        )
    text_str, vlm_str = render_template(template, record)
    text_ids = bundle.text.tokenize(text_str)
    vlm_source = bundle.vlm if bundle.vlm is not None else bundle.text
    vlm_ids = vlm_source.tokenize(vlm_str)
    return PromptPair(text=text_ids, vlm=vlm_ids)


def _unwrap_remote(source) -> RemoteSource | None:
    """Find a remote source under caching/counting/recording wrappers."""
    while source is not None:
        if isinstance(source, RemoteSource):
            return source
        source = getattr(source, "inner", None)
    return None


def resolve_image(record: dict, bundle: SourceBundle):
    if "image_path" in record:
        path = Path(record["image_path"])
        image = image_from_id(str(path))
        remote = _unwrap_remote(bundle.vlm)
        if remote is not None:
            remote.register_image(image.id, path.read_bytes())
        return image
    image_id = record.get("image")
    return None if image_id is None else image_from_id(image_id)


def error_record(index: int, err: Exception) -> dict:
    return {
        "input_index": index,
        "error": {"type": type(err).__name__, "message": str(err)},
    }


def decode_records(
    run: RunConfig,
    bundle: SourceBundle,
    records: list[dict],
    decode_cfg: DecodeConfig,
    scorer: str | None,
    explain: bool,
    keep_going: bool,
    config_hash: str = "",
    parallel: int = 1,
) -> tuple[list[dict], Exception | None]:
    """One output record per input record, in order.

    Returns (records, fatal_error); with keep_going, per-record errors are
    recorded in-line and fatal_error stays None. ``parallel`` > 1 decodes
    records concurrently (output order preserved); it refuses sources that
    declared themselves serial.
    """
    template = load_template(run.prompt_template)
    random_marginal = bool(run.marginal and run.marginal.get("scheme") == "random_sample")

    def decode_one(index: int, record: dict) -> dict:
        prompt = resolve_prompt(record, template, bundle)
        image = resolve_image(record, bundle)
        result = decode(bundle, prompt, image, decode_cfg, scorer=scorer, explain=explain)
        row = {
            "input_index": index,
            "scorer": scorer or decode_cfg.scorer,
            "tokens": list(result.tokens),
            "text": result.text,
            "final_score": result.final_score,
            "stop_reason": result.stop_reason,
            "config_hash": config_hash,
            "seed": run.seed,
        }
        if "id" in record:
            row["id"] = record["id"]
        if explain:
            row["per_step"] = result.per_step
        if random_marginal:
            row["marginal_images"] = [img.id for img in decode_cfg.marginal_images]
        return row

    if parallel > 1:
        return _decode_parallel(bundle, records, decode_one, keep_going, parallel)

    out: list[dict] = []
    for index, record in enumerate(records):
        try:
            out.append(decode_one(index, record))
        except EngineError as err:
            log.error("record %d failed: %s", index, err)
            out.append(error_record(index, err))
            if not keep_going:
                return out, err
    return out, None


def _decode_parallel(bundle, records, decode_one, keep_going, parallel):
    from concurrent.futures import ThreadPoolExecutor

    for source in (bundle.text, bundle.vlm):
        if source is not None and source.serial_only:
            raise UsageError(
                f"source {source.name} is serial; parallel decoding needs "
                f"sources that allow concurrent queries"
            )
    out: list[dict | None] = [None] * len(records)
    fatal: Exception | None = None
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        futures = {
            pool.submit(decode_one, index, record): index
            for index, record in enumerate(records)
        }
        for future in futures:
            index = futures[future]
            try:
                out[index] = future.result()
            except EngineError as err:
                log.error("record %d failed: %s", index, err)
                out[index] = error_record(index, err)
                if not keep_going and fatal is None:
                    fatal = err
    if fatal is not None:
        return [row for row in out if row is not None], fatal
    return out, None


def write_jsonl(path: str | Path, rows: list[dict]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dump_line(row) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_decode(args) -> int:
    run, config_hash = _run_config_from_args(args)
    bundle, _ = build_bundle(run)
    decode_cfg = resolve_marginal_images(run)
    records = read_jsonl(run.inputs)
    rows, fatal = decode_records(
        run, bundle, records, decode_cfg, scorer=None,
        explain=args.explain, keep_going=args.keep_going, config_hash=config_hash,
        parallel=args.parallel,
    )
    write_jsonl(run.output, rows)
    if fatal is not None:
        _emit_error(fatal)
        return _exit_code_for(fatal)
    log.info("decoded %d records -> %s", len(rows), run.output)
    return EXIT_OK


def cmd_compare(args) -> int:
    scorers = [s.strip() for s in args.scorers.split(",") if s.strip()]
    if len(scorers) < 2:
        raise UsageError("compare needs at least two scorers (--scorers a,b)")
    run, config_hash = _run_config_from_args(args)
    bundle, _ = build_bundle(run)
    decode_cfg = resolve_marginal_images(run)
    records = read_jsonl(run.inputs)
    per_scorer: dict[str, list[dict]] = {}
    for scorer in scorers:
        rows, fatal = decode_records(
            run, bundle, records, decode_cfg, scorer=scorer,
            explain=args.explain, keep_going=args.keep_going, config_hash=config_hash,
        )
        if fatal is not None:
            write_jsonl(run.output, rows)
            _emit_error(fatal)
            return _exit_code_for(fatal)
        per_scorer[scorer] = rows
    out_rows = []
    for index in range(len(records)):
        row = {"input_index": index, "outputs": {}}
        if "id" in records[index]:
            row["id"] = records[index]["id"]
        for scorer in scorers:
            entry = dict(per_scorer[scorer][index])
            entry.pop("input_index", None)
            entry.pop("id", None)
            entry.pop("scorer", None)
            row["outputs"][scorer] = entry
        out_rows.append(row)
    agreement = {}
    for i, a in enumerate(scorers):
        for b in scorers[i + 1 :]:
            same = sum(
                1
                for idx in range(len(records))
                if per_scorer[a][idx].get("text") == per_scorer[b][idx].get("text")
            )
            agreement[f"{a}|{b}"] = same / len(records) if records else 1.0
    out_rows.append({"agreement": agreement, "scorers": scorers})
    write_jsonl(run.output, out_rows)
    log.info("compared %s over %d records -> %s", scorers, len(records), run.output)
    return EXIT_OK


def _apply_sweep_value(run: RunConfig, decode_cfg: DecodeConfig, parameter: str, value):
    if parameter == "alpha":
        return decode_cfg.with_(fluency_threshold=float(value))
    if parameter == "tau":
        return decode_cfg.with_(language_temperature=float(value))
    count = int(value)
    block = run.marginal or {}
    if block.get("scheme") == "random_sample":
        spec = sample_image_pool(block["pool_dir"], count, seed=run.seed)
        return decode_cfg.with_(marginal_images=spec.images)
    images = decode_cfg.marginal_images
    if count > len(images):
        raise ConfigError(
            f"marginal_count {count} exceeds the {len(images)} configured images"
        )
    return decode_cfg.with_(marginal_images=images[:count])


def cmd_sweep(args) -> int:
    if args.parameter not in SWEEPABLE:
        raise UsageError(f"unknown sweep parameter {args.parameter!r}; pick from {SWEEPABLE}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("sweep needs at least one value")
    run, config_hash = _run_config_from_args(args)
    bundle, _ = build_bundle(run)
    base_cfg = resolve_marginal_images(run)
    records = read_jsonl(run.inputs)
    out_rows = []
    for value in values:
        decode_cfg = _apply_sweep_value(run, base_cfg, args.parameter, value)
        rows, fatal = decode_records(
            run, bundle, records, decode_cfg, scorer=None,
            explain=False, keep_going=args.keep_going, config_hash=config_hash,
        )
        if fatal is not None:
            write_jsonl(run.output, out_rows + rows)
            _emit_error(fatal)
            return _exit_code_for(fatal)
        ok_rows = [r for r in rows if "error" not in r]
        reports = [metrics_report(tuple(r["tokens"])) for r in ok_rows]
        n = len(reports)
        row = {
            "parameter": args.parameter,
            "value": float(value) if args.parameter in ("alpha", "tau") else int(value),
            "n": n,
            "errors": len(rows) - n,
            "mean_rep_2": sum(r.rep_2 for r in reports) / n if n else None,
            "mean_diversity": sum(r.diversity for r in reports) / n if n else None,
            "mean_tokens": sum(r.token_count for r in reports) / n if n else None,
        }
        golds = _gold_matches(records, rows)
        if golds is not None:
            row["accuracy"] = golds
        out_rows.append(row)
    write_jsonl(run.output, out_rows)
    log.info("swept %s over %s -> %s", args.parameter, values, run.output)
    return EXIT_OK


def _gold_matches(records: list[dict], rows: list[dict]) -> float | None:
    """Exact-match accuracy against per-record gold answers, if any exist."""
    total = 0
    hits = 0
    for record, row in zip(records, rows):
        if "error" in row:
            continue
        if "gold_tokens" in record:
            total += 1
            want = [int(t) for t in record["gold_tokens"]]
            got = list(row["tokens"])
            if got[:-1] == want or got == want:  # tolerate trailing eos
                hits += 1
        elif "gold" in record:
            total += 1
            if row["text"] == record["gold"]:
                hits += 1
    if total == 0:
        return None
    return hits / total


def cmd_eval(args) -> int:
    records = read_jsonl(args.inputs)
    rows = []
    for index, record in enumerate(records):
        if "tokens" not in record:
            rows.append(error_record(index, UsageError("record has no 'tokens' field")))
            continue
        report = metrics_report(tuple(int(t) for t in record["tokens"]))
        row = {"input_index": index, **report.to_json()}
        if "id" in record:
            row["id"] = record["id"]
        rows.append(row)
    write_jsonl(args.output, rows)
    return EXIT_OK


def cmd_trace(args) -> int:
    run, config_hash = _run_config_from_args(args)
    bundle, vocabulary = build_bundle(run)
    recorded_text = RecordingSource(bundle.text)
    recorded_vlm = None if bundle.vlm is None else RecordingSource(bundle.vlm)
    recording_bundle = SourceBundle(
        vocabulary=vocabulary,
        text=recorded_text,
        vlm=recorded_vlm,
        embedding_role=bundle.embedding_role,
    )
    decode_cfg = resolve_marginal_images(run)
    records = read_jsonl(run.inputs)
    rows, fatal = decode_records(
        run, recording_bundle, records, decode_cfg, scorer=None,
        explain=args.explain, keep_going=args.keep_going, config_hash=config_hash,
    )
    write_jsonl(run.output, rows)
    trace_dir = Path(args.trace_dir)
    trace_dir.mkdir(parents=True, exist_ok=True)
    write_trace(trace_dir / "text.trace.jsonl", vocabulary, recorded_text.records())
    if recorded_vlm is not None:
        write_trace(trace_dir / "vlm.trace.jsonl", vocabulary, recorded_vlm.records())
    if fatal is not None:
        _emit_error(fatal)
        return _exit_code_for(fatal)
    log.info("recorded traces into %s", trace_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Wiring


def _run_config_from_args(args) -> tuple[RunConfig, str]:
    run = load_run_config(args.config)
    overrides = {}
    if getattr(args, "output", None):
        overrides["output"] = args.output
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        run = RunConfig(**{**_as_kwargs(run), **overrides})
    return run, config_file_hash(args.config)


def _as_kwargs(run: RunConfig) -> dict:
    return {
        "decode": run.decode,
        "text_source": run.text_source,
        "vlm_source": run.vlm_source,
        "vocab": run.vocab,
        "prompt_template": run.prompt_template,
        "inputs": run.inputs,
        "output": run.output,
        "seed": run.seed,
        "marginal": run.marginal,
        "embedding_role": run.embedding_role,
    }


def _exit_code_for(err: Exception) -> int:
    if isinstance(err, InvariantViolation):
        return EXIT_INTERNAL
    if isinstance(err, SourceError):
        return EXIT_SOURCE
    if isinstance(err, (ConfigError, UsageError)):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def _emit_error(err: Exception):
    sys.stderr.write(
        dump_line({"error": {"type": type(err).__name__, "message": str(err)}}) + "\n"
    )


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="run config JSON path")
    parser.add_argument("--output", help="override the config's output path")
    parser.add_argument("--seed", type=int, help="override the config's seed")
    parser.add_argument("--explain", action="store_true", help="emit per-step score breakdowns")
    parser.add_argument(
        "--keep-going",
        action="store_true",
        help="record per-record errors in-line instead of stopping",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmi-decode",
        description="Decode with a text-only model reweighted by a visual model's "
        "pointwise mutual information.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="decode every input record")
    _add_common(p)
    p.add_argument(
        "--parallel",
        type=int,
        default=1,
        metavar="N",
        help="decode records with N worker threads (sources must allow "
        "concurrent queries); output order is preserved",
    )
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("compare", help="side-by-side decode with several scorers")
    _add_common(p)
    p.add_argument("--scorers", required=True, help="comma-separated scorer names")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep", help="one decode run per hyperparameter value")
    _add_common(p)
    p.add_argument("--parameter", required=True, help=f"one of {SWEEPABLE}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("eval", help="text-quality metrics per input line")
    p.add_argument("--inputs", required=True, help="JSONL with a 'tokens' field per line")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("trace", help="decode while recording all source queries")
    _add_common(p)
    p.add_argument("--trace-dir", required=True, help="directory for trace files")
    p.set_defaults(fn=cmd_trace)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PMI_DECODE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as err:
        _emit_error(err)
        log.debug("fatal", exc_info=True)
        return _exit_code_for(err)


if __name__ == "__main__":
    sys.exit(main())
