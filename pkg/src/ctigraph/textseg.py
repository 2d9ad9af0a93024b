"""Rule-based sentence splitting and tokenization over protected text.

Tokenization runs on the surrogate text (IOCs already replaced by a plain
word), then every surrogate token is swapped back to its original surface so
each IOC is exactly one token with its original character span.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass

from .ioc import ProtectedText, protect_iocs
from .model import EntityType

ABBREVIATIONS = frozenset(
    "e.g i.e etc vs mr mrs ms dr prof no fig cf al inc corp ltd st apt".split()
)

_WORD = re.compile(r"[A-Za-z0-9_]+(?:['’-][A-Za-z0-9_]+)*|[^\sA-Za-z0-9_]")
_SENT_BREAK = re.compile(r"[.!?]+")


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int
    sent_index: int
    is_ioc: bool = False
    ioc_type: EntityType | None = None
    canonical: str | None = None


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[Token, ...]
    text: str
    n_sentences: int

    def sentence(self, index: int) -> list[Token]:
        return [t for t in self.tokens if t.sent_index == index]

    def sentences(self) -> list[list[Token]]:
        return [self.sentence(i) for i in range(self.n_sentences)]


def _sentence_spans(text: str, ioc_starts: frozenset[int] = frozenset()) -> list[tuple[int, int]]:
    """Split on ./!/? runs followed by whitespace and an upper/digit start,
    unless the preceding word is a known abbreviation or a single initial.
    A protected IOC (always lowercase in surrogate text) may start a sentence."""
    spans = []
    start = 0
    for m in _SENT_BREAK.finditer(text):
        end = m.end()
        rest = text[end:]
        stripped = rest.lstrip()
        next_pos = end + (len(rest) - len(stripped))
        starts_ioc = next_pos in ioc_starts
        if stripped and not (
            stripped[0].isupper() or stripped[0].isdigit() or stripped[0] in "\"'(" or starts_ioc
        ):
            continue
        if rest and not rest[:1].isspace():
            continue
        prev = text[start : m.start()].rstrip()
        last_word = prev.split()[-1].lower().rstrip(".") if prev.split() else ""
        if last_word in ABBREVIATIONS or (len(last_word) == 1 and last_word.isalpha()):
            continue
        spans.append((start, end))
        start = end
    if start < len(text) and text[start:].strip():
        spans.append((start, len(text)))
    if not spans and text.strip():
        spans.append((0, len(text)))
    return spans


def _split_at_surrogates(start: int, end: int, cuts: list[int]) -> list[tuple[int, int]]:
    points = [start] + [c for c in cuts if start < c < end] + [end]
    return [(points[i], points[i + 1]) for i in range(len(points) - 1)]


def tokenize(pt: ProtectedText) -> TokenSeq:
    """Tokenize surrogate text, then restore IOC tokens to original surfaces.

    Token spans refer to the original text; concatenating surfaces with the
    recorded gaps reproduces it exactly.
    """
    surrogate = pt.surrogate_text
    sent_spans = _sentence_spans(
        surrogate, frozenset(s.surrogate_span[0] for s in pt.span_map)
    )

    surr_starts = [s.surrogate_span[0] for s in pt.span_map]
    surr_ends = [s.surrogate_span[1] for s in pt.span_map]
    cuts = sorted(set(surr_starts + surr_ends))
    by_span = {s.surrogate_span: s for s in pt.span_map}

    # original offset = surrogate offset + accumulated length delta of all
    # surrogate spans that end at or before it
    boundaries = []
    acc_deltas = []
    acc = 0
    for entry in pt.span_map:
        o_len = entry.original_span[1] - entry.original_span[0]
        s_len = entry.surrogate_span[1] - entry.surrogate_span[0]
        acc += o_len - s_len
        boundaries.append(entry.surrogate_span[1])
        acc_deltas.append(acc)

    def to_original(pos: int) -> int:
        i = bisect.bisect_right(boundaries, pos)
        return pos + (acc_deltas[i - 1] if i else 0)

    tokens: list[Token] = []
    for sent_index, (s_start, s_end) in enumerate(sent_spans):
        for m in _WORD.finditer(surrogate, s_start, s_end):
            for t_start, t_end in _split_at_surrogates(m.start(), m.end(), cuts):
                entry = by_span.get((t_start, t_end))
                if entry is not None:
                    tokens.append(
                        Token(
                            surface=entry.original_surface,
                            start=entry.original_span[0],
                            end=entry.original_span[1],
                            sent_index=sent_index,
                            is_ioc=True,
                            ioc_type=entry.ioc_type,
                            canonical=entry.canonical,
                        )
                    )
                else:
                    o_start = to_original(t_start)
                    o_end = to_original(t_end)
                    tokens.append(
                        Token(
                            surface=pt.original_text[o_start:o_end],
                            start=o_start,
                            end=o_end,
                            sent_index=sent_index,
                        )
                    )
    return TokenSeq(tokens=tuple(tokens), text=pt.original_text, n_sentences=len(sent_spans))


def protect_and_tokenize(text: str) -> tuple[ProtectedText, TokenSeq]:
    pt = protect_iocs(text)
    return pt, tokenize(pt)
