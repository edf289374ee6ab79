"""Training-free audio description toolkit.

Generates one-sentence ADs for video clips by visually tagging known
characters and prompting external vision/language endpoints in two
stages; formulates AD datasets by aligning narrated soundtracks to the
originals; and evaluates predictions with consensus, character, and
judge-model metrics.
"""

from .characters import (
    CharacterBank,
    CharacterProfile,
    FaceDetection,
    FaceMatch,
    detect_faces,
    ingest_bank,
    load_bank,
    match_frame,
    save_bank,
)
from .gateway import (
    ChatMessage,
    ChatOutcome,
    EndpointConfig,
    HttpGateway,
    ScriptedGateway,
)
from .prompting import (
    AnnotatedClip,
    ColorAssignment,
    LabelPosition,
    LabelStyle,
    LabelType,
    TextPosition,
    annotate_clip,
    assign_colors,
    bbox_to_ellipse,
)
from .stage1 import (
    DescriptionFactors,
    VideoClip,
    VideoDescription,
    build_stage1_prompt,
    describe_clip,
    parse_stage1_answer,
    sample_frames,
)
from .stage2 import (
    ADRecord,
    SummaryConfig,
    VerbList,
    build_stage2_prompt,
    builtin_verb_list,
    compute_verb_list,
    parse_summary,
    summarize,
)
from .alignment import (
    AnchorPair,
    AudioTrack,
    MelSpec,
    TimeMap,
    TranscriptSegment,
    build_ads,
    filter_diarization,
    filter_rules,
    filter_text_match,
    find_anchors,
    mask_intervals,
    mel_spectrogram,
    ransac_fit,
    word_error_rate,
)
from .evaluation import (
    EvalPair,
    MetricReport,
    char_metrics,
    cider,
    critic,
    duration_stats,
    extract_names,
    llm_ad_eval,
)
from .config import RunConfig

__version__ = "0.1.0"

__all__ = [
    "ADRecord",
    "AnchorPair",
    "AnnotatedClip",
    "AudioTrack",
    "CharacterBank",
    "CharacterProfile",
    "ChatMessage",
    "ChatOutcome",
    "ColorAssignment",
    "DescriptionFactors",
    "EndpointConfig",
    "EvalPair",
    "FaceDetection",
    "FaceMatch",
    "HttpGateway",
    "LabelPosition",
    "LabelStyle",
    "LabelType",
    "MelSpec",
    "MetricReport",
    "RunConfig",
    "ScriptedGateway",
    "SummaryConfig",
    "TextPosition",
    "TimeMap",
    "TranscriptSegment",
    "VerbList",
    "VideoClip",
    "VideoDescription",
    "annotate_clip",
    "assign_colors",
    "bbox_to_ellipse",
    "build_ads",
    "build_stage1_prompt",
    "build_stage2_prompt",
    "builtin_verb_list",
    "char_metrics",
    "cider",
    "compute_verb_list",
    "critic",
    "describe_clip",
    "detect_faces",
    "duration_stats",
    "extract_names",
    "filter_diarization",
    "filter_rules",
    "filter_text_match",
    "find_anchors",
    "ingest_bank",
    "llm_ad_eval",
    "load_bank",
    "mask_intervals",
    "match_frame",
    "mel_spectrogram",
    "parse_stage1_answer",
    "parse_summary",
    "ransac_fit",
    "sample_frames",
    "save_bank",
    "summarize",
    "word_error_rate",
]
