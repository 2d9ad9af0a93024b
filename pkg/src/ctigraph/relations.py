"""Verb-linking relation extraction between recognized entities.

A documented stand-in for dependency-parse relation mining with the same
input/output contract: for each ordered pair of same-sentence entities with
no third entity between them, the leftmost lexicon verb in the gap names the
relation; a passive construction ("is dropped by") swaps head and tail.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .model import EntityMention, RelationMention
from .textseg import TokenSeq

log = logging.getLogger(__name__)

DEFAULT_VERBS = (
    "drop", "download", "create", "connect", "inject", "delete", "modify",
    "use", "exploit", "send", "execute", "install", "spread", "encrypt",
    "steal", "contact", "write", "read", "launch", "target",
)

_IRREGULAR = {
    "sent": "send", "stole": "steal", "stolen": "steal", "wrote": "write",
    "written": "write", "read": "read", "ran": "run", "run": "run",
}

_BE_FORMS = frozenset({"is", "are", "was", "were", "be", "been", "being"})

_VOWELS = "aeiou"


def _inflections(verb: str) -> set[str]:
    forms = {verb}
    if verb.endswith("e"):
        forms.add(verb + "s")
        forms.add(verb + "d")
        forms.add(verb[:-1] + "ing")
    elif verb.endswith("y") and len(verb) > 2 and verb[-2] not in _VOWELS:
        forms.add(verb[:-1] + "ies")
        forms.add(verb[:-1] + "ied")
        forms.add(verb + "ing")
    else:
        forms.add(verb + "s")
        # single final consonant after single vowel doubles: drop -> dropped
        if (
            len(verb) >= 3
            and verb[-1] not in _VOWELS + "wxy"
            and verb[-2] in _VOWELS
            and verb[-3] not in _VOWELS
        ):
            forms.add(verb + verb[-1] + "ed")
            forms.add(verb + verb[-1] + "ing")
        else:
            forms.add(verb + "ed")
            forms.add(verb + "ing")
    return forms


class VerbLexicon:
    """Maps inflected verb surfaces back to their lexicon lemma."""

    def __init__(self, verbs: tuple[str, ...] = DEFAULT_VERBS):
        self.verbs = tuple(verbs)
        self.form_to_lemma: dict[str, str] = {}
        for verb in verbs:
            for form in _inflections(verb):
                self.form_to_lemma.setdefault(form, verb)
        for form, lemma in _IRREGULAR.items():
            if lemma in verbs:
                self.form_to_lemma.setdefault(form, lemma)

    @classmethod
    def from_file(cls, path: str | Path) -> "VerbLexicon":
        verbs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            word = line.strip().lower()
            if word and not word.startswith("#"):
                verbs.append(word)
        return cls(tuple(verbs))

    def lemma(self, surface: str) -> str | None:
        return self.form_to_lemma.get(surface.lower())


def _token_index_range(ts: TokenSeq, span: tuple[int, int]) -> tuple[int, int]:
    first = last = -1
    for i, tok in enumerate(ts.tokens):
        if tok.end <= span[0]:
            continue
        if tok.start >= span[1]:
            break
        if first < 0:
            first = i
        last = i
    return first, last


def extract_relations(
    ts: TokenSeq,
    entities: list[EntityMention],
    lexicon: VerbLexicon | None = None,
) -> list[RelationMention]:
    """Relations between adjacent same-sentence entity pairs.

    ``entities`` must be span-anchored and sorted by span; mentions anchored
    to structured fields are ignored here.
    """
    lexicon = lexicon or VerbLexicon()
    spanned = [(idx, m) for idx, m in enumerate(entities) if m.span is not None]
    positions = []
    for idx, mention in spanned:
        t_first, t_last = _token_index_range(ts, mention.span)
        if t_first >= 0:
            positions.append((idx, mention, t_first, t_last))
    positions.sort(key=lambda item: item[2])

    relations = []
    for k in range(len(positions) - 1):
        head_idx, head, _, head_last = positions[k]
        tail_idx, tail, tail_first, _ = positions[k + 1]
        head_tok = ts.tokens[head_last]
        tail_tok = ts.tokens[tail_first]
        if head_tok.sent_index != tail_tok.sent_index:
            continue
        gap = range(head_last + 1, tail_first)
        verb_at = -1
        lemma = None
        for i in gap:
            candidate = lexicon.lemma(ts.tokens[i].surface)
            if candidate is not None:
                verb_at = i
                lemma = candidate
                break
        if lemma is None:
            continue
        passive = any(
            ts.tokens[i].surface.lower() in _BE_FORMS for i in range(head_last + 1, verb_at)
        ) and any(ts.tokens[i].surface.lower() == "by" for i in range(verb_at + 1, tail_first))
        src, dst = (tail_idx, head_idx) if passive else (head_idx, tail_idx)
        relations.append(
            RelationMention(
                head=src,
                tail=dst,
                verb=lemma.upper().replace("-", "_"),
                evidence_span=(head.span[0], tail.span[1]),
                confidence=min(head.confidence, tail.confidence),
            )
        )
    return relations
