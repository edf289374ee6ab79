"""Stage I: structured video description from a vision endpoint.

Builds the multi-question prompt (identify characters, then describe
actions / interactions / facial expressions, plus optional extra
factors), sends it with 8 uniformly sampled annotated frames, and parses
the numbered answer template back into a VideoDescription.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .characters import (
    CharacterBank,
    FaceDetector,
    FaceMatch,
    detect_faces,
    match_frame,
)
from .errors import ContractError, ParseError
from .gateway import ChatMessage, EndpointConfig, Gateway, encode_frame
from .prompting import (
    DEFAULT_PALETTE,
    LabelStyle,
    LabelType,
    annotate_clip,
    assign_colors,
)

logger = logging.getLogger(__name__)

DEFAULT_FRAMES_PER_CLIP = 8
DEFAULT_MEDIA_KIND = "TV series"


@dataclass(frozen=True)
class VideoClip:
    clip_id: str
    frames: list  # PIL images
    timestamps: list[float]
    start: float
    end: float

    def __post_init__(self):
        if self.end <= self.start:
            raise ContractError("clip end must be after start")
        if len(self.frames) != len(self.timestamps):
            raise ContractError("one timestamp per frame required")
        for t0, t1 in zip(self.timestamps, self.timestamps[1:]):
            if t1 < t0:
                raise ContractError("timestamps must be non-decreasing")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class DescriptionFactors:
    actions: bool = True
    interactions: bool = True
    facial_expressions: bool = True
    environment: bool = False
    appearance: bool = False
    objects: bool = False

    def __post_init__(self):
        if not any(
            (self.actions, self.interactions, self.facial_expressions,
             self.environment, self.appearance, self.objects)
        ):
            raise ContractError("at least one description factor must be enabled")


@dataclass
class VideoDescription:
    main_characters: str = ""
    actions: str = ""
    interactions: str = ""
    facial_expressions: str = ""
    extras: dict[str, str] = field(default_factory=dict)
    raw: str = ""


def sample_frames(clip: VideoClip, n: int = DEFAULT_FRAMES_PER_CLIP) -> list[int]:
    """Uniformly spaced frame indices including both endpoints.

    Index i of n is round(i * (F - 1) / (n - 1)); when the clip has fewer
    than n frames all of them are returned without repetition.
    """
    if n < 1:
        raise ContractError("n must be positive")
    count = len(clip.frames)
    if count == 0:
        raise ContractError(f"clip {clip.clip_id} has no frames")
    if count <= n:
        return list(range(count))
    if n == 1:
        return [0]
    # round-half-up keeps the spacing independent of banker's rounding
    return [int(i * (count - 1) / (n - 1) + 0.5) for i in range(n)]


# Question and answer-template fragments, keyed by factor. Order is fixed.
_FACTOR_SPECS: list[tuple[str, str, str]] = [
    (
        "actions",
        "Describe the actions of characters in one sentence, i.e., who is "
        "doing what, focusing on the movements",
        "Actions",
    ),
    (
        "interactions",
        "Describe the interactions between characters in one sentence, "
        "such as looking",
        "Character-character interactions",
    ),
    (
        "facial_expressions",
        "Describe the facial expressions of characters in one sentence",
        "Facial expressions",
    ),
    (
        "environment",
        "Describe the environments in one sentence, focusing on the "
        "location, furniture, entrances and exits, etc.",
        "Environments",
    ),
    (
        "appearance",
        "Describe the appearances and costumes of characters in one sentence",
        "Appearances",
    ),
    (
        "objects",
        "Describe the interactions between objects and characters in one sentence",
        "Object interactions",
    ),
]

_NUMBER_WORDS = {
    1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven",
}

_MARKER_WORDS = {LabelType.CIRCLE: "circles", LabelType.BOX: "boxes"}


def enabled_factors(factors: DescriptionFactors) -> list[tuple[str, str, str]]:
    return [spec for spec in _FACTOR_SPECS if getattr(factors, spec[0])]


def build_stage1_prompt(
    char_text: str,
    label_type: LabelType = LabelType.CIRCLE,
    factors: DescriptionFactors = DescriptionFactors(),
    media_kind: str = DEFAULT_MEDIA_KIND,
) -> str:
    """Assemble the Stage-I question prompt; pure and byte-deterministic.

    With an empty ``char_text`` (or no visual markers) the character
    indication clause and the colored-marker caveat are omitted.  The
    answer template enumerates exactly the enabled factors, in order.
    """
    marker = _MARKER_WORDS.get(label_type)
    active = enabled_factors(factors)
    steps = []
    first = "Identify main characters"
    if char_text and marker:
        first += f" (if {marker} are available)"
    if char_text:
        first += f": {char_text}"
    steps.append(first)
    steps.extend(question for _, question, _ in active)

    count_word = _NUMBER_WORDS[len(steps)]
    numbered = "; ".join(f"{i + 1}. {step}" for i, step in enumerate(steps))
    prompt = (
        f"Please describe the {media_kind} clip in the following "
        f"{count_word} steps: {numbered}. "
    )
    if char_text and marker:
        prompt += (
            f"Note, colored {marker} are provided for character indications "
            "only, DO NOT mention them in the description. "
        )
    prompt += "Make sure you do not hallucinate information. "
    headings = ["Main characters"] + [heading for _, _, heading in active]
    template = "; ".join(f"{i + 1}. {h}: ''" for i, h in enumerate(headings))
    prompt += f"###ANSWER TEMPLATE###: {template}."
    return prompt


def _clean_section(text: str) -> str:
    text = text.strip()
    text = re.sub(r"[;,]\s*$", "", text).strip()
    for left, right in (("'", "'"), ('"', '"')):
        if len(text) >= 2 and text.startswith(left) and text.endswith(right):
            text = text[1:-1].strip()
    return text


def parse_stage1_answer(
    text: str, factors: DescriptionFactors = DescriptionFactors()
) -> VideoDescription:
    """Split a templated answer on its numbered headings.

    Case-insensitive, tolerant of missing quotes and extra whitespace.
    Missing sections come back as empty strings with a warning; if no
    heading is found at all the reply is unusable and ParseError is
    raised so the caller may retry once.
    """
    active = enabled_factors(factors)
    headings = [("main_characters", "Main characters")] + [
        (key, heading) for key, _, heading in active
    ]
    found: list[tuple[int, int, str]] = []  # (start, end-of-heading, key)
    for key, heading in headings:
        words = r"\s+".join(re.escape(word) for word in heading.split())
        pattern = re.compile(r"\d+\s*\.?\s*" + words + r"\s*:", re.IGNORECASE)
        match = pattern.search(text)
        if match:
            found.append((match.start(), match.end(), key))
    if not found:
        raise ParseError("no answer-template heading found in reply")
    found.sort()
    sections: dict[str, str] = {}
    for idx, (_, end, key) in enumerate(found):
        stop = found[idx + 1][0] if idx + 1 < len(found) else len(text)
        sections[key] = _clean_section(text[end:stop])

    desc = VideoDescription(raw=text)
    for key, heading in headings:
        if key not in sections:
            logger.warning("section %r missing from Stage-I reply", heading)
        value = sections.get(key, "")
        if key in ("main_characters", "actions", "interactions", "facial_expressions"):
            setattr(desc, key, value)
        else:
            desc.extras[key] = value
    return desc


@dataclass
class Stage1Config:
    endpoint: EndpointConfig
    style: LabelStyle = LabelStyle()
    factors: DescriptionFactors = DescriptionFactors()
    frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP
    match_threshold: float = 0.2
    media_kind: str = DEFAULT_MEDIA_KIND
    palette: tuple = DEFAULT_PALETTE
    pad_ratio: float = 0.5


def describe_clip(
    clip: VideoClip,
    bank: CharacterBank,
    detector: FaceDetector,
    gateway: Gateway,
    config: Stage1Config,
    body_boxes: dict | None = None,
) -> VideoDescription:
    """Full Stage-I pass for one clip.

    Sample frames, match faces per frame, assign colors, annotate, prompt
    the vision endpoint with the annotated frames, and parse the reply.
    One automatic retry on a malformed reply, then the error surfaces
    with the clip id attached.
    """
    indices = sample_frames(clip, config.frames_per_clip)
    sampled = [clip.frames[i] for i in indices]
    matches = []
    for position, frame_index in enumerate(indices):
        try:
            detections = detect_faces(
                clip.frames[frame_index], detector, frame_index=frame_index
            )
        except Exception as exc:
            logger.warning("clip %s frame %d: %s", clip.clip_id, frame_index, exc)
            continue
        for m in match_frame(detections, bank, config.match_threshold):
            # Matches are re-indexed onto the sampled-frame positions the
            # annotator and the endpoint actually see.
            matches.append(
                FaceMatch(
                    frame_index=position,
                    character_index=m.character_index,
                    bbox=m.bbox,
                    score=m.score,
                )
            )
    try:
        assignment = assign_colors(matches, config.palette)
        annotated = annotate_clip(
            sampled,
            matches,
            assignment,
            config.style,
            names=bank.names,
            body_boxes=body_boxes,
            pad_ratio=config.pad_ratio,
        )
        prompt = build_stage1_prompt(
            annotated.char_text,
            config.style.label_type,
            config.factors,
            config.media_kind,
        )
        images = tuple(encode_frame(f) for f in annotated.frames)
        message = ChatMessage(role="user", text=prompt, images=images)
        outcome = gateway.complete(config.endpoint, [message])
        try:
            return parse_stage1_answer(outcome.text, config.factors)
        except ParseError:
            logger.warning("clip %s: malformed Stage-I reply, retrying once",
                           clip.clip_id)
            outcome = gateway.complete(config.endpoint, [message])
            return parse_stage1_answer(outcome.text, config.factors)
    except Exception as exc:
        exc.args = (f"clip {clip.clip_id}: {exc}",)
        raise
