"""Weak supervision: gazetteer labeling functions and vote resolution.

Labels for the sequence tagger are synthesized programmatically instead of
annotated by hand: each labeling function votes BIO tags (or abstains) over
token ranges, and a weighted majority vote resolves each token.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GazetteerMissing
from .model import LEARNABLE_TYPES, EntityType
from .textseg import TokenSeq

log = logging.getLogger(__name__)

ABSTAIN = None

#: gazetteer file stem -> entity type its terms denote
GAZETTEER_TYPES = {
    "actors": EntityType.THREAT_ACTOR,
    "techniques": EntityType.TECHNIQUE,
    "tools": EntityType.TOOL,
    "malware": EntityType.REPORT_MALWARE,
    "software": EntityType.SOFTWARE,
}

#: Tie-break priority when two votes carry equal weight: B- beats I-, then
#: entity types in declaration order of the learnable set.
TYPE_PRIORITY = {etype: i for i, etype in enumerate(LEARNABLE_TYPES)}


def bio_tag(prefix: str, etype: EntityType) -> str:
    return f"{prefix}-{etype.value}"


def split_tag(tag: str) -> tuple[str, EntityType | None]:
    if tag == "O":
        return "O", None
    prefix, _, value = tag.partition("-")
    return prefix, EntityType(value)


@dataclass(frozen=True)
class Gazetteer:
    """Curated entity-name list; terms are stored as lowercase token tuples."""

    name: str
    etype: EntityType
    phrases: frozenset[tuple[str, ...]]
    max_len: int

    @classmethod
    def from_file(cls, path: Path, etype: EntityType) -> "Gazetteer":
        if not path.exists():
            raise GazetteerMissing(f"gazetteer file not found: {path}")
        phrases = set()
        for line in path.read_text(encoding="utf-8").splitlines():
            term = line.strip()
            if not term or term.startswith("#"):
                continue
            phrases.add(tuple(term.lower().split()))
        return cls(
            name=path.stem,
            etype=etype,
            phrases=frozenset(phrases),
            max_len=max((len(p) for p in phrases), default=1),
        )


def load_gazetteers(directory: str | Path) -> dict[str, Gazetteer]:
    directory = Path(directory)
    out = {}
    for stem, etype in GAZETTEER_TYPES.items():
        out[stem] = Gazetteer.from_file(directory / f"{stem}.txt", etype)
    return out


@dataclass(frozen=True)
class LabelVote:
    lf_name: str
    token_range: tuple[int, int]
    tags: tuple[str, ...]  # one BIO tag per token in range; never empty


class GazetteerLF:
    """Votes B-/I- tags on maximal gazetteer phrase matches, abstains elsewhere."""

    def __init__(self, gazetteer: Gazetteer, weight: float = 1.0):
        self.gazetteer = gazetteer
        self.name = f"gaz-{gazetteer.name}"
        self.weight = weight

    def __call__(self, ts: TokenSeq) -> list[LabelVote]:
        votes = []
        lowered = [t.surface.lower() for t in ts.tokens]
        n = len(lowered)
        i = 0
        while i < n:
            matched = 0
            for length in range(min(self.gazetteer.max_len, n - i), 0, -1):
                window = tuple(lowered[i : i + length])
                if window in self.gazetteer.phrases and _same_sentence(ts, i, i + length):
                    matched = length
                    break
            if matched:
                tags = [bio_tag("B", self.gazetteer.etype)]
                tags += [bio_tag("I", self.gazetteer.etype)] * (matched - 1)
                votes.append(LabelVote(self.name, (i, i + matched), tuple(tags)))
                i += matched
            else:
                i += 1
        return votes


def _same_sentence(ts: TokenSeq, start: int, end: int) -> bool:
    return ts.tokens[start].sent_index == ts.tokens[end - 1].sent_index


def default_labeling_functions(gazetteers: dict[str, Gazetteer],
                               weights: dict[str, float] | None = None) -> list[GazetteerLF]:
    """One LF per gazetteer; ``weights`` are precision priors (default uniform)."""
    weights = weights or {}
    lfs = []
    for stem in GAZETTEER_TYPES:
        gaz = gazetteers[stem]
        lfs.append(GazetteerLF(gaz, weight=weights.get(f"gaz-{stem}", 1.0)))
    return lfs


@dataclass
class SynthesisResult:
    labels: list[str]
    confidences: list[float]
    tie_events: list[tuple[int, str]] = field(default_factory=list)


def _tag_sort_key(tag: str) -> tuple[int, int]:
    prefix, etype = split_tag(tag)
    return (0 if prefix == "B" else 1, TYPE_PRIORITY.get(etype, 99))


def repair_bio(labels: list[str]) -> list[str]:
    """I- without a same-type B-/I- predecessor becomes B-."""
    repaired = list(labels)
    for i, tag in enumerate(repaired):
        prefix, etype = split_tag(tag)
        if prefix != "I":
            continue
        prev = repaired[i - 1] if i else "O"
        prev_prefix, prev_type = split_tag(prev)
        if prev_prefix == "O" or prev_type != etype:
            repaired[i] = bio_tag("B", etype)
    return repaired


def synthesize_labels(ts: TokenSeq, lfs: list[GazetteerLF]) -> SynthesisResult:
    """Resolve LF votes into one BIO sequence with per-token confidence.

    Weighted majority vote per token; equal-weight ties go to the
    highest-priority tag (logged); tokens every LF abstained on are O.
    """
    n = len(ts.tokens)
    per_token: list[dict[str, float]] = [{} for _ in range(n)]
    for lf in lfs:
        for vote in lf(ts):
            start, end = vote.token_range
            for offset, tag in enumerate(vote.tags):
                idx = start + offset
                if 0 <= idx < n:
                    per_token[idx][tag] = per_token[idx].get(tag, 0.0) + lf.weight

    labels = []
    confidences = []
    tie_events = []
    for idx, tally in enumerate(per_token):
        if not tally:
            labels.append("O")
            confidences.append(1.0)
            continue
        best_weight = max(tally.values())
        winners = sorted((t for t, w in tally.items() if w == best_weight), key=_tag_sort_key)
        if len(winners) > 1:
            tie_events.append((idx, "|".join(winners)))
            log.debug("label tie at token %d resolved to %s among %s", idx, winners[0], winners)
        labels.append(winners[0])
        confidences.append(best_weight / sum(tally.values()))

    return SynthesisResult(labels=repair_bio(labels), confidences=confidences,
                           tie_events=tie_events)
