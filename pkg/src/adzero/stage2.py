"""Stage II: one-sentence summary of the Stage-I description.

The summarization prompt layers four rule groups onto the dense
description: character naming rules, action-priority rules built around
a top-frequency verb list, a duration hint, and style examples.  The
model answers with a dictionary-literal string holding the final
sentence, which is parsed back out here.
"""

from __future__ import annotations

import ast
import importlib.resources
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError, ParseError
from .gateway import ChatMessage, EndpointConfig, Gateway
from .stage1 import DEFAULT_MEDIA_KIND, VideoDescription
from .textnorm import normalize_tokens, strip_wrapping_quotes

logger = logging.getLogger(__name__)

DEFAULT_VERB_COUNT = 15


@dataclass(frozen=True)
class ADRecord:
    """One audio-description sentence with its time window."""

    clip_id: str
    text: str
    start: float
    end: float

    def __post_init__(self):
        if self.end <= self.start:
            raise ContractError("record end must be after start")
        if not self.text:
            raise ContractError("record text must be non-empty")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class VerbList:
    verbs: tuple[str, ...]
    k: int

    def __post_init__(self):
        if len(set(self.verbs)) != len(self.verbs):
            raise ContractError("verb list must not contain duplicates")


def _resource_text(name: str) -> str:
    return importlib.resources.files("adzero.resources").joinpath(name).read_text(
        encoding="utf-8"
    )


def load_verb_lexicon() -> dict[str, str]:
    """Bundled inflection -> lemma map for common English verbs."""
    return json.loads(_resource_text("verb_lemmas.json"))


def builtin_verb_list(domain: str = "tv") -> VerbList:
    """Shipped top-15 verb lists ('tv' or 'cmd' training-split fixtures)."""
    name = {"tv": "verb_list_tv.json", "cmd": "verb_list_cmd.json"}.get(domain)
    if name is None:
        raise ContractError(f"unknown verb-list domain {domain!r}")
    verbs = tuple(json.loads(_resource_text(name)))
    return VerbList(verbs=verbs, k=len(verbs))


def compute_verb_list(
    train_ads: list[str],
    k: int = DEFAULT_VERB_COUNT,
    lexicon: dict[str, str] | None = None,
) -> VerbList:
    """Top-k most frequent verb lemmas in a training corpus.

    Tokens are lowercased and mapped through the lexicon; only tokens the
    lexicon knows count.  Ties break alphabetically.  Fewer than k
    distinct verbs yields a shorter list with a warning.
    """
    if not train_ads:
        raise ContractError("training corpus must be non-empty")
    if k < 1:
        raise ContractError("k must be positive")
    if lexicon is None:
        lexicon = load_verb_lexicon()
    counts: Counter[str] = Counter()
    for sentence in train_ads:
        for token in normalize_tokens(sentence):
            lemma = lexicon.get(token)
            if lemma is not None:
                counts[lemma] += 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    verbs = tuple(lemma for lemma, _ in ranked[:k])
    if len(verbs) < k:
        logger.warning("only %d distinct verbs found (k=%d)", len(verbs), k)
    return VerbList(verbs=verbs, k=len(verbs))


@dataclass(frozen=True)
class SummaryConfig:
    character_rules: bool = True
    action_rules: bool = True
    length_hint: bool = True
    examples: bool = True
    verb_list: VerbList = field(default_factory=builtin_verb_list)
    media_kind: str = DEFAULT_MEDIA_KIND
    legacy_instruction_wrapper: bool = False

    def __post_init__(self):
        if self.action_rules and not self.verb_list.verbs:
            raise ContractError("action rules require a non-empty verb list")


def _system_text(media_kind: str) -> str:
    return (
        f"You are an intelligent chatbot designed for summarizing {media_kind} "
        "audio descriptions. Here's how you can accomplish the "
        "task:------##INSTRUCTIONS: you should convert the predicted "
        "descriptions into one sentence. You should directly start the answer "
        "with the converted results WITHOUT providing ANY more sentences at "
        "the beginning or at the end."
    )


def build_stage2_prompt(
    desc: VideoDescription,
    duration: float,
    config: SummaryConfig = SummaryConfig(),
) -> tuple[str, str]:
    """Return (system text, user text) for the summarization call.

    The user prompt interpolates the Stage-I output verbatim, the verb
    list, and the duration formatted to one decimal; each disabled config
    flag omits exactly its rule block.  With ``legacy_instruction_wrapper``
    the raw single-turn instruction tokens are emitted around the pair so
    concatenation reproduces the one-string chat format byte for byte.
    """
    if duration <= 0:
        raise ContractError("duration must be positive")
    stage1_output = desc.raw
    pieces = [
        (
            True,
            f"Please summarise the following description for one "
            f"{config.media_kind} clip into ONE succinct audio description "
            "(AD) sentence.\n",
        ),
        (True, f"Description: {stage1_output}\n\n"),
        (
            config.action_rules,
            "Focus on the most attractive characters and their actions.\n",
        ),
        (
            config.character_rules,
            "For characters, use their first names, remove titles such as "
            "'Mr.' and 'Dr.'. If names are not available, use pronouns such "
            "as 'He' and 'her', do not use expression such as 'a man'.\n",
        ),
        (
            config.action_rules,
            "For actions, avoid mentioning the camera, and do not focus on "
            "'talking' or position-related ones such as 'sitting' and "
            "'standing'.\n",
        ),
        (True, "Do not mention characters' mood.\n"),
        (True, "Do not hallucinate information that is not mentioned in the input.\n"),
        (
            config.action_rules,
            "Try to identify the following motions (with decreasing "
            f"priorities): {list(config.verb_list.verbs)!r}, and use them in "
            "the description.\n",
        ),
        (
            config.length_hint,
            "Provide the AD from a narrator perspective and adjust the length "
            "of the output according to the duration.\n"
            f"Duration of the video clip: {duration:.1f}s\n\n",
        ),
        (
            config.examples,
            "For example, a response of duration 0.8s could be: "
            "{'summarised_AD': 'She looks at Riker.'}.\n"
            "Another example response of duration 1.4s is: "
            "{'summarised_AD': 'Paul looks at his wife lovingly.'}.\n"
            "An example response of duration 2.6s is: "
            "{'summarised_AD': 'He watches Tasha calmly battle with the figure.'}.\n",
        ),
    ]
    user = "".join(text for enabled, text in pieces if enabled)
    system = _system_text(config.media_kind)
    if config.legacy_instruction_wrapper:
        return f"[INST] <<SYS>> \n {system}\n<</SYS>>\n\n", user + " [/INST] "
    return system, user


_DICT_VALUE = re.compile(
    r"\{\s*['\"]summarised_AD['\"]\s*:\s*(['\"])(.*?)\1\s*\}", re.DOTALL
)
_SENTENCE_END = re.compile(r"(?<=[.!?])\s")


def parse_summary(text: str) -> str:
    """Extract the AD sentence from a dictionary-literal reply.

    Accepts single or double quotes and surrounding prose.  When no
    dictionary is found, falls back (with a warning) to the first
    sentence of the reply with wrapping quotes stripped.
    """
    if not text or not text.strip():
        raise ParseError("empty summarization reply")
    match = _DICT_VALUE.search(text)
    if match:
        return match.group(2).strip()
    brace = re.search(r"\{.*?\}", text, re.DOTALL)
    if brace:
        try:
            value = ast.literal_eval(brace.group(0))
            if isinstance(value, dict) and "summarised_AD" in value:
                return str(value["summarised_AD"]).strip()
        except (ValueError, SyntaxError):
            pass
    logger.warning("no summary dictionary found; falling back to first sentence")
    stripped = strip_wrapping_quotes(text)
    return _SENTENCE_END.split(stripped, maxsplit=1)[0].strip()


def summarize(
    desc: VideoDescription,
    duration: float,
    gateway: Gateway,
    endpoint: EndpointConfig,
    config: SummaryConfig = SummaryConfig(),
    clip_id: str = "",
    start: float = 0.0,
) -> ADRecord:
    """Build the prompt, call the language endpoint, parse one AD sentence."""
    if duration <= 0:
        raise ContractError("duration must be positive")
    system, user = build_stage2_prompt(desc, duration, config)
    messages = [
        ChatMessage(role="system", text=system),
        ChatMessage(role="user", text=user),
    ]
    outcome = gateway.complete(endpoint, messages)
    sentence = parse_summary(outcome.text)
    if not sentence:
        raise ParseError("summarization reply parsed to an empty sentence")
    return ADRecord(clip_id=clip_id, text=sentence, start=start, end=start + duration)
