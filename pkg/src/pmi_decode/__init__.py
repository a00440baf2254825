"""Decoding engine that reweights a text-only language model's next-token
distribution by a visual-language model's exponentiated pointwise mutual
information, with pluggable model sources and an oracle-testable core."""

from .core import (
    BLACK_IMAGE,
    WHITE_IMAGE,
    ContextTokens,
    DecodeConfig,
    Hypothesis,
    ImageContext,
    TokenDistribution,
    Vocabulary,
    as_context,
    image_from_id,
    normalize,
    validate_distribution,
)
from .decoding import (
    DecodeResult,
    PromptPair,
    SourceBundle,
    beam_decode,
    contrastive_decode,
    decode,
    greedy_decode,
)
from .marginal import MarginalCache, MarginalSpec, estimate_marginal, sample_image_pool
from .metrics import MetricsReport, diversity, metrics_report, rep_n
from .scoring import (
    StepScores,
    fluency_candidates,
    naive_ensemble_step_scores,
    pmi_weights,
    single_model_step_scores,
    smooth,
    vlis_step_scores,
)
from .sources import (
    CachingSource,
    CountingSource,
    ModelSource,
    ModelSourceDescriptor,
    RecordingSource,
    RemoteSource,
    TableModel,
    TokenEmbeddingSource,
    TraceRecord,
    TraceSource,
    load_table_model,
    load_trace,
    record_trace,
    save_table_model,
    write_trace,
)

__version__ = "0.1.0"
