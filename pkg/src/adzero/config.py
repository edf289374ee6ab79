"""Run configuration: one flat JSON document with strict key checking.

Defaults mirror the toolkit's standard operating point: 0.2 match
threshold, 8 frames per clip, top-10 character banks, circle + face +
in-text markers, and the conservative alignment constants.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError
from .gateway import EndpointConfig
from .prompting import LabelPosition, LabelStyle, LabelType, TextPosition
from .stage1 import DescriptionFactors

_FACTOR_NAMES = (
    "actions",
    "interactions",
    "facial_expressions",
    "environment",
    "appearance",
    "objects",
)

_LABEL_TYPES = {
    "circle": LabelType.CIRCLE,
    "circles": LabelType.CIRCLE,
    "box": LabelType.BOX,
    "boxes": LabelType.BOX,
    "none": LabelType.NONE,
}
_LABEL_POSITIONS = {
    "face": LabelPosition.FACE,
    "body": LabelPosition.BODY,
    "face_and_body": LabelPosition.FACE_AND_BODY,
    "face+body": LabelPosition.FACE_AND_BODY,
}
_TEXT_POSITIONS = {
    "in_text": TextPosition.IN_TEXT,
    "in-text": TextPosition.IN_TEXT,
    "in_image": TextPosition.IN_IMAGE,
    "in-image": TextPosition.IN_IMAGE,
}


@dataclass
class RunConfig:
    # Endpoints
    vlm_base_url: str = "http://localhost:8000/v1"
    vlm_model: str = "vlm"
    llm_base_url: str = "http://localhost:8001/v1"
    llm_model: str = "llm"
    judge_base_url: str = "http://localhost:8002/v1"
    judge_model: str = "judge"
    max_tokens: int = 512
    temperature: float = 0.0
    timeout_s: float = 120.0
    max_in_flight: int = 4
    retry_limit: int = 2
    # Visual prompting style (marker vocabulary: circles/boxes/none,
    # face/body/face+body, in-text/in-image)
    label_type: str = "circle"
    label_position: str = "face"
    text_position: str = "in_text"
    pad_ratio: float = 0.5
    # Stage I
    factors: list[str] = field(
        default_factory=lambda: ["actions", "interactions", "facial_expressions"]
    )
    frames_per_clip: int = 8
    match_threshold: float = 0.2
    bank_capacity: int = 10
    media_kind: str = "TV series"
    # Stage II
    summary_character_rules: bool = True
    summary_action_rules: bool = True
    summary_length_hint: bool = True
    summary_examples: bool = True
    verb_domain: str = "tv"
    verb_list: list[str] | None = None
    legacy_instruction_wrapper: bool = False
    # Alignment
    align_chunk_s: float = 10.0
    align_stride_s: float = 30.0
    align_min_anchor_score: float = 0.3
    align_inlier_tol_s: float = 0.5
    align_iterations: int = 1000
    align_min_inlier_ratio: float = 0.2
    align_delta_t_s: float = 3.0
    align_wer_threshold: float = 0.4
    # Evaluation
    cider_variant: str = "plain"
    judge_score_adapter: str = "strict"
    # General
    seed: int = 0
    jobs: int = 0  # 0 = number of cores

    @classmethod
    def known_keys(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - cls.known_keys()
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, ValueError) as exc:
            raise ContractError(f"unreadable config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ContractError("config file must hold a JSON object")
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.label_type.lower() not in _LABEL_TYPES:
            raise ContractError(f"unknown label_type {self.label_type!r}")
        if self.label_position.lower() not in _LABEL_POSITIONS:
            raise ContractError(f"unknown label_position {self.label_position!r}")
        if self.text_position.lower() not in _TEXT_POSITIONS:
            raise ContractError(f"unknown text_position {self.text_position!r}")
        bad = set(self.factors) - set(_FACTOR_NAMES)
        if bad:
            raise ContractError(f"unknown factors: {sorted(bad)}")
        if self.verb_domain not in ("tv", "cmd"):
            raise ContractError(f"unknown verb_domain {self.verb_domain!r}")
        if self.cider_variant not in ("plain", "d"):
            raise ContractError(f"unknown cider_variant {self.cider_variant!r}")
        if self.judge_score_adapter not in ("strict", "lenient"):
            raise ContractError(
                f"unknown judge_score_adapter {self.judge_score_adapter!r}"
            )

    def style(self) -> LabelStyle:
        return LabelStyle(
            label_type=_LABEL_TYPES[self.label_type.lower()],
            label_position=_LABEL_POSITIONS[self.label_position.lower()],
            text_position=_TEXT_POSITIONS[self.text_position.lower()],
        )

    def description_factors(self) -> DescriptionFactors:
        return DescriptionFactors(
            **{name: name in self.factors for name in _FACTOR_NAMES}
        )

    def endpoint(self, which: str) -> EndpointConfig:
        base_url, model = {
            "vlm": (self.vlm_base_url, self.vlm_model),
            "llm": (self.llm_base_url, self.llm_model),
            "judge": (self.judge_base_url, self.judge_model),
        }[which]
        return EndpointConfig(
            base_url=base_url,
            model_name=model,
            max_tokens=self.max_tokens,
            temperature=self.temperature,
            timeout=self.timeout_s,
            max_in_flight=self.max_in_flight,
            retry_limit=self.retry_limit,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
