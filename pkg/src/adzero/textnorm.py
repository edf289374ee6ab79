"""Shared text normalization: one tokenizer for WER, CIDEr, and verb counts."""

from __future__ import annotations

import re

_WORD = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, collapse whitespace; return word list.

    Word-internal apostrophes survive ("i'll" stays one token) so that
    contractions are not split into spurious words.
    """
    return _WORD.findall(text.lower())


def strip_wrapping_quotes(text: str) -> str:
    """Remove one layer of matching straight or curly quotes around text."""
    text = text.strip()
    pairs = [("'", "'"), ('"', '"'), ("‘", "’"), ("“", "”")]
    for left, right in pairs:
        if len(text) >= 2 and text.startswith(left) and text.endswith(right):
            return text[1:-1].strip()
    return text
