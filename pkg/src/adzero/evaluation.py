"""Metrics for predicted ADs: CIDEr, CRITIC, an LLM judge, and
character-recognition set metrics, plus AD duration statistics.

CIDEr follows the consensus TF-IDF n-gram scheme: per n in 1..4, build
TF-IDF vectors with IDF taken over the reference sets and score the
cosine between the candidate and the mean reference vector, averaging
(10 / n_max) over n.  CRITIC compares character-name sets extracted from
prediction and reference after pronoun coreference resolution.  The LLM
judge scores each pair on an integer scale via a fixed prompt.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .characters import CharacterBank, first_name
from .errors import ContractError, MetricError, ParseError
from .gateway import ChatMessage, EndpointConfig, Gateway
from .stage2 import ADRecord
from .textnorm import normalize_tokens

logger = logging.getLogger(__name__)

# Judge score adapter for models that otherwise score too strictly.
LENIENT_SCORE_ADAPTER = (
    "Be generous at scoring, and focus on matching of sentence meaning. "
)


@dataclass(frozen=True)
class EvalPair:
    pred: str
    refs: tuple[str, ...]
    clip_id: str = ""
    gt_duration: float | None = None

    def __post_init__(self):
        if not self.pred:
            raise ContractError("pred must be non-empty")
        if not self.refs or any(not r for r in self.refs):
            raise ContractError("at least one non-empty reference is required")


@dataclass
class MetricReport:
    metric: str
    corpus_score: float
    per_item: list[float | None]
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "corpus_score": self.corpus_score,
            "per_item": self.per_item,
            "config": self.config,
            **self.extras,
        }


# --------------------------------------------------------------------------
# CIDEr


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _cosine(a: dict, b: dict) -> float:
    dot = sum(v * b[k] for k, v in a.items() if k in b)
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def cider(
    pairs: list[EvalPair],
    n_max: int = 4,
    use_d: bool = False,
    sigma: float = 6.0,
) -> MetricReport:
    """Consensus caption score over a corpus of (pred, refs) pairs.

    IDF is log(|corpus| / df) with df counted over reference sets
    (clamped at 1 for n-grams the references never use, matching the
    common implementation).  ``use_d`` switches to the D variant with
    count clipping and a gaussian length penalty.
    """
    if not pairs:
        raise ContractError("at least one pair is required")
    n_pairs = len(pairs)
    pred_tokens = [normalize_tokens(p.pred) for p in pairs]
    ref_tokens = [[normalize_tokens(r) for r in p.refs] for p in pairs]

    doc_freq: list[Counter] = []
    for n in range(1, n_max + 1):
        df: Counter = Counter()
        for refs in ref_tokens:
            seen = set()
            for toks in refs:
                seen.update(_ngram_counts(toks, n))
            df.update(seen)
        doc_freq.append(df)

    log_n = math.log(n_pairs)

    def tfidf(counts: Counter, n: int) -> dict:
        df = doc_freq[n - 1]
        return {
            g: tf * (log_n - math.log(max(df.get(g, 0), 1)))
            for g, tf in counts.items()
        }

    scores: list[float] = []
    for tokens, refs in zip(pred_tokens, ref_tokens):
        total = 0.0
        for n in range(1, n_max + 1):
            cand = tfidf(_ngram_counts(tokens, n), n)
            if use_d:
                per_ref = []
                for ref in refs:
                    ref_vec = tfidf(_ngram_counts(ref, n), n)
                    clipped = {
                        g: min(v, ref_vec.get(g, 0.0)) for g, v in cand.items()
                    }
                    penalty = math.exp(
                        -((len(tokens) - len(ref)) ** 2) / (2 * sigma**2)
                    )
                    per_ref.append(_cosine(clipped, ref_vec) * penalty)
                total += sum(per_ref) / len(per_ref)
            else:
                mean_ref: dict = {}
                for ref in refs:
                    for g, v in tfidf(_ngram_counts(ref, n), n).items():
                        mean_ref[g] = mean_ref.get(g, 0.0) + v / len(refs)
                total += _cosine(cand, mean_ref)
        scores.append(10.0 / n_max * total)

    return MetricReport(
        metric="cider",
        corpus_score=float(np.mean(scores)),
        per_item=scores,
        config={"n_max": n_max, "variant": "cider-d" if use_d else "cider"},
    )


# --------------------------------------------------------------------------
# CRITIC and character-recognition metrics


class CorefResolver:
    """Port: rewrite pronouns in an AD into bank names where resolvable."""

    def resolve(self, text: str, bank: CharacterBank) -> str:
        raise NotImplementedError


class IdentityCoref(CorefResolver):
    """Deterministic rule stub: maps nothing (text passes through)."""

    def resolve(self, text, bank):
        return text


class ScriptedCoref(CorefResolver):
    """Test stub with a fixed pronoun -> name mapping (whole-word)."""

    def __init__(self, mapping: dict[str, str]):
        self.mapping = mapping

    def resolve(self, text, bank):
        for pronoun, name in self.mapping.items():
            text = re.sub(rf"\b{re.escape(pronoun)}\b", name, text)
        return text


class LlmCoref(CorefResolver):
    """Coreference through the chat gateway: ask for a rewritten sentence."""

    def __init__(self, gateway: Gateway, endpoint: EndpointConfig):
        self.gateway = gateway
        self.endpoint = endpoint

    def resolve(self, text, bank):
        names = ", ".join(bank.names)
        prompt = (
            "Rewrite the following audio description, replacing pronouns with "
            f"the correct character names from this list where the referent "
            f"is clear: {names}. Keep everything else unchanged and reply "
            f"with the rewritten sentence only.\nDescription: {text}"
        )
        outcome = self.gateway.complete(
            self.endpoint, [ChatMessage(role="user", text=prompt)]
        )
        return outcome.text.strip() or text


def extract_names(
    ad: str, bank: CharacterBank, coref: CorefResolver | None = None
) -> set[str]:
    """Bank first names mentioned in an AD, after pronoun resolution.

    Matching is whole-word and case-insensitive on first names (lowercased
    in the returned set).  A failing coreference port falls back to the
    raw text with a warning.
    """
    text = ad
    if coref is not None:
        try:
            text = coref.resolve(ad, bank)
        except Exception as exc:
            logger.warning("coreference port failed (%s); using raw text", exc)
            text = ad
    words = set(normalize_tokens(text))
    return {
        first_name(name).lower()
        for name in bank.names
        if first_name(name).lower() in words
    }


def _iou(a: set, b: set) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def critic(
    pairs: list[EvalPair],
    bank: CharacterBank,
    coref: CorefResolver | None = None,
) -> MetricReport:
    """Character-identification IoU between predicted and reference ADs.

    Pairs whose reference name set is empty are excluded from the mean;
    the report carries the excluded count.  Scores are reported x100.
    """
    if not pairs:
        raise ContractError("at least one pair is required")
    per_item: list[float | None] = []
    included = []
    excluded = 0
    for pair in pairs:
        pred_names = extract_names(pair.pred, bank, coref)
        ref_names: set[str] = set()
        for ref in pair.refs:
            ref_names |= extract_names(ref, bank, coref)
        if not ref_names:
            per_item.append(None)
            excluded += 1
            continue
        value = len(pred_names & ref_names) / len(pred_names | ref_names) * 100.0
        per_item.append(value)
        included.append(value)
    if not included:
        raise MetricError("every pair had an empty reference name set")
    return MetricReport(
        metric="critic",
        corpus_score=float(np.mean(included)),
        per_item=per_item,
        extras={"excluded": excluded},
    )


def char_metrics(
    pred_names: list[set[str]], gt_names: list[set[str]]
) -> MetricReport:
    """Per-item IoU / precision / recall over name sets, means x100.

    Empty-set conventions: both empty counts as perfect agreement; a
    one-sided empty set scores 0 on the undefined side.
    """
    if len(pred_names) != len(gt_names):
        raise ContractError("prediction and ground-truth lists differ in length")
    if not pred_names:
        raise ContractError("at least one item is required")
    ious, precisions, recalls = [], [], []
    for p, g in zip(pred_names, gt_names):
        inter = len(p & g)
        ious.append(_iou(p, g))
        precisions.append(1.0 if not p and not g else (inter / len(p) if p else 0.0))
        recalls.append(1.0 if not p and not g else (inter / len(g) if g else 0.0))
    return MetricReport(
        metric="char",
        corpus_score=float(np.mean(ious)) * 100.0,
        per_item=[v * 100.0 for v in ious],
        extras={
            "iou": float(np.mean(ious)) * 100.0,
            "precision": float(np.mean(precisions)) * 100.0,
            "recall": float(np.mean(recalls)) * 100.0,
        },
    )


# --------------------------------------------------------------------------
# LLM judge

_JUDGE_SYSTEM = (
    "You are an intelligent chatbot designed for evaluating the quality of "
    "generative outputs for movie audio descriptions. Your task is to compare "
    "the predicted audio descriptions with the correct audio descriptions and "
    "determine its level of match, considering mainly the visual elements "
    "like actions, objects and interactions. Here's how you can accomplish "
    "the task:------##INSTRUCTIONS: - Check if the predicted audio "
    "description covers the main visual events from the movie, especially "
    "focusing on the verbs and nouns.\n- Evaluate whether the predicted "
    "audio description includes specific details rather than just generic "
    "points. It should provide comprehensive information that is tied to "
    "specific elements of the video.\n- Consider synonyms or paraphrases as "
    "valid matches. Consider pronouns like 'he' or 'she' as valid matches "
    "with character names. Consider different character names as valid "
    "matches. \n- Provide a single evaluation score that reflects the level "
    "of match of the prediction, considering the visual elements like "
    "actions, objects and interactions. "
)


def build_judge_prompt(
    gt_ad: str, pred_ad: str, score_adapter: str = ""
) -> tuple[str, str]:
    """(system, user) prompts asking for a ``{'score': k}`` reply."""
    user = (
        "Please evaluate the following movie audio description pair:\n\n"
        f"Correct Audio Description: {gt_ad}\n"
        f"Predicted Audio Description: {pred_ad}\n\n"
        "Provide your evaluation only as a matching score where the matching "
        "score is an integer value between 0 and 5, with 5 indicating the "
        "highest level of match. "
        f"{score_adapter}"
        "Please generate the response in the form of a Python dictionary "
        "string with keys 'score', where its value is the matching score in "
        "INTEGER, not STRING. "
        "DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR EXPLANATION. Only provide "
        "the Python dictionary string. "
        "For example, your response should look like this: {'score': }."
    )
    return _JUDGE_SYSTEM, user


_SCORE = re.compile(r"\{\s*['\"]score['\"]\s*:\s*(-?\d+)")


def parse_judge_score(text: str) -> int:
    """Integer from a ``{'score': k}`` reply, clamped to [0, 5]."""
    match = _SCORE.search(text)
    if not match:
        raise ParseError(f"no score dictionary in judge reply {text[:80]!r}")
    return max(0, min(5, int(match.group(1))))


def llm_ad_eval(
    pairs: list[EvalPair],
    gateway: Gateway,
    judge: EndpointConfig,
    score_adapter: str = "",
) -> MetricReport:
    """Judge-model metric: mean integer match score over the corpus.

    Each pair is judged against its first reference.  Unparseable replies
    are retried once, then recorded as missing and excluded from the mean
    (the report carries the count).
    """
    if not pairs:
        raise ContractError("at least one pair is required")
    per_item: list[float | None] = []
    parsed: list[int] = []
    missing = 0
    for pair in pairs:
        system, user = build_judge_prompt(pair.refs[0], pair.pred, score_adapter)
        messages = [
            ChatMessage(role="system", text=system),
            ChatMessage(role="user", text=user),
        ]
        score: int | None = None
        for _ in range(2):
            outcome = gateway.complete(judge, messages)
            try:
                score = parse_judge_score(outcome.text)
                break
            except ParseError:
                logger.warning("unparseable judge reply for %r", pair.clip_id)
        if score is None:
            missing += 1
            per_item.append(None)
        else:
            parsed.append(score)
            per_item.append(float(score))
    if not parsed:
        raise MetricError("no judge reply could be parsed")
    return MetricReport(
        metric="llm_ad_eval",
        corpus_score=float(np.mean(parsed)),
        per_item=per_item,
        config={"score_adapter": score_adapter, "judge_model": judge.model_name},
        extras={"missing": missing},
    )


# --------------------------------------------------------------------------
# Dataset statistics


@dataclass
class DurationStats:
    mean: float
    bin_width: float
    counts: list[int]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "bin_width": self.bin_width, "counts": self.counts}


def duration_stats(records: list[ADRecord], bin_width: float = 1.0) -> DurationStats:
    """Mean AD duration and a histogram over [0, max) with the given bins."""
    if not records:
        raise ContractError("at least one record is required")
    if bin_width <= 0:
        raise ContractError("bin_width must be positive")
    durations = np.array([r.duration for r in records])
    n_bins = max(1, int(np.ceil(durations.max() / bin_width)))
    if durations.max() == n_bins * bin_width:
        n_bins += 1  # keep the top edge exclusive
    counts, _ = np.histogram(
        durations, bins=n_bins, range=(0.0, n_bins * bin_width)
    )
    return DurationStats(
        mean=float(durations.mean()),
        bin_width=bin_width,
        counts=counts.tolist(),
    )
