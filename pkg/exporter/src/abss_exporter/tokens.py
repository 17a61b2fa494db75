"""Word-to-token-index mapping for annotation files.

Core-word annotations arrive at the word level (JSON with core_tokens /
adjectives / verbs / prepositions lists of words). The engine wants token
indices under the model's own tokenization, BOS at index 0, so each word is
located as a contiguous run of subword tokens whose concatenated text matches
it case-insensitively. Multi-subword words contribute every subword index;
words appearing several times contribute every occurrence.
"""

from __future__ import annotations

import re
import warnings
from typing import Sequence

from .errors import ExportError

_WORD_CATEGORIES = ("core_tokens", "adjectives", "verbs", "prepositions")
_STRIP = re.compile(r"[^0-9a-z]")


def clean_token(token: str) -> str:
    """Normalize a subword token to bare lowercase text ('Dog</w>' -> 'dog')."""
    token = token.lower()
    for marker in ("</w>", "##", "Ġ", "▁"):
        token = token.replace(marker, "")
    return _STRIP.sub("", token)


def find_word_spans(tokens: Sequence[str], word: str) -> list[list[int]]:
    """All contiguous token runs whose concatenated cleaned text equals `word`."""
    target = _STRIP.sub("", word.lower())
    if not target:
        return []
    cleaned = [clean_token(t) for t in tokens]
    spans = []
    for start in range(len(cleaned)):
        if not cleaned[start] or not target.startswith(cleaned[start]):
            continue
        text = ""
        for stop in range(start, len(cleaned)):
            if not cleaned[stop]:
                break
            text += cleaned[stop]
            if text == target:
                spans.append(list(range(start, stop + 1)))
                break
            if not target.startswith(text):
                break
    return spans


def map_core_words(prompt_id: str, tokens: Sequence[str], words: dict) -> dict:
    """Build an index-form annotation from a word-level one.

    `words` holds word lists under core_tokens / adjectives / verbs /
    prepositions. A word that cannot be located in the token sequence is
    skipped with a warning; if every core word is skipped the annotation is
    useless and an ExportError is raised. Index 0 (BOS) and the last index
    (EOS) never appear in the output.
    """
    n = len(tokens)
    out = {"prompt_id": prompt_id, "token_count": n}
    taken: set[int] = set()
    for category in _WORD_CATEGORIES:
        indices: set[int] = set()
        for word in words.get(category, ()):
            spans = find_word_spans(tokens, word)
            span_indices = {
                i for span in spans for i in span if 0 < i < n - 1
            }
            if not span_indices:
                warnings.warn(
                    f"prompt '{prompt_id}': {category} word '{word}' not found in the "
                    "tokenized prompt; skipped",
                    stacklevel=2,
                )
                continue
            indices |= span_indices
        # categories must stay disjoint; the first category to claim an index wins
        indices -= taken
        taken |= indices
        out[category] = sorted(indices)
    if words.get("core_tokens") and not out["core_tokens"]:
        raise ExportError(
            f"prompt '{prompt_id}': none of the core words "
            f"{list(words['core_tokens'])} could be mapped to token indices"
        )
    return out
