"""Question-guided document highlighting for multimodal QA, plus the
evaluation harness, retrieval, and occlusion analysis around it."""

from .answering import (
    Answer,
    HttpMllm,
    MllmRequest,
    MockMllm,
    UNANSWERABLE_TOKEN,
    ask,
    build_prompt,
    extract_cot_answer,
    normalize_answer,
)
from .attention import (
    AttendedImage,
    AttentionMask,
    HighlightStyle,
    MaskParams,
    SpotlightConfig,
    adaptive_sigma,
    apply_attention,
    blend_highlight,
    gaussian_mask,
    mask_params,
    should_draw,
    spotlight,
)
from .caching import PIPELINE_VERSION
from .embedding import (
    EmbeddingBackendDescriptor,
    EmbeddingVector,
    HttpEmbedder,
    SelectionResult,
    SyntheticEmbedder,
    clean_query,
    cosine_sim,
    embed_patches,
    embed_text,
    select_from_page,
    select_patch,
)
from .errors import BackendError, ConfigError, ContractError, DatasetError, InputError, SpotlightError
from .harness import (
    EvalReport,
    EvidenceBBox,
    QARecord,
    RunConfig,
    fineness_ratio,
    load_dataset,
    render_report,
    run_eval,
    write_report_files,
)
from .metrics import (
    AggregateScores,
    QuestionScore,
    aggregate,
    anls,
    exact_match,
    levenshtein,
    mcq_accuracy,
    score_answer,
    token_f1,
)
from .occlusion import (
    ConstantLogitsBackend,
    OcclusionConfig,
    SensitivityGrid,
    occlusion_sweep,
    response_probability,
    smooth_heatmap,
)
from .pages import GridSpec, NormPoint, PageImage, Patch, PatchRect, grid_slice, patch_center
from .retrieval import CorpusIndex, RetrievalResult, index_corpus, inject_distractors, retrieve_topk

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "AggregateScores",
    "AttendedImage",
    "AttentionMask",
    "BackendError",
    "ConfigError",
    "ConstantLogitsBackend",
    "ContractError",
    "CorpusIndex",
    "DatasetError",
    "EmbeddingBackendDescriptor",
    "EmbeddingVector",
    "EvalReport",
    "EvidenceBBox",
    "GridSpec",
    "HighlightStyle",
    "HttpEmbedder",
    "HttpMllm",
    "InputError",
    "MaskParams",
    "MllmRequest",
    "MockMllm",
    "NormPoint",
    "OcclusionConfig",
    "PageImage",
    "Patch",
    "PatchRect",
    "PIPELINE_VERSION",
    "QARecord",
    "QuestionScore",
    "RetrievalResult",
    "RunConfig",
    "SelectionResult",
    "SensitivityGrid",
    "SpotlightConfig",
    "SpotlightError",
    "SyntheticEmbedder",
    "UNANSWERABLE_TOKEN",
    "adaptive_sigma",
    "aggregate",
    "anls",
    "apply_attention",
    "ask",
    "blend_highlight",
    "build_prompt",
    "clean_query",
    "cosine_sim",
    "embed_patches",
    "embed_text",
    "exact_match",
    "extract_cot_answer",
    "fineness_ratio",
    "gaussian_mask",
    "grid_slice",
    "index_corpus",
    "inject_distractors",
    "levenshtein",
    "load_dataset",
    "mask_params",
    "mcq_accuracy",
    "normalize_answer",
    "occlusion_sweep",
    "patch_center",
    "render_report",
    "response_probability",
    "retrieve_topk",
    "run_eval",
    "score_answer",
    "select_from_page",
    "select_patch",
    "should_draw",
    "smooth_heatmap",
    "spotlight",
    "token_f1",
    "write_report_files",
]
