"""IOC grammars, defang handling, and surrogate protection.

Security artifacts are full of characters (dots, backslashes, ``[.]``
defanging) that wreck sentence splitting and tokenization, so before any
text segmentation every maximal IOC match is replaced by the neutral word
``something``; the span map records enough to restore the original text
byte-for-byte and to recover each IOC as a single token afterwards.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .model import EntityType

SURROGATE = "something"

# --- defang fragments -------------------------------------------------------

_DOT = r"(?:\.|\[\.\]|\(\.\)|\[dot\]|\(dot\))"
_AT = r"(?:@|\[@\]|\[at\]|\(at\))"
_SCHEME = r"(?:hxxps?|https?|ftp)"

_REFANG_RULES = [
    (re.compile(r"\[\.\]|\(\.\)|\[dot\]|\(dot\)", re.IGNORECASE), "."),
    (re.compile(r"\[@\]|\[at\]|\(at\)", re.IGNORECASE), "@"),
    (re.compile(r"\[:\]"), ":"),
    (re.compile(r"\bhxxp", re.IGNORECASE), "http"),
]


def refang(raw: str) -> str:
    """Canonical (clickable) form of a possibly defanged IOC surface."""
    out = raw
    for pattern, repl in _REFANG_RULES:
        out = pattern.sub(repl, out)
    return out


# --- grammars ----------------------------------------------------------------

_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"

#: TLDs the domain grammar accepts. Deliberately excludes strings that double
#: as executable extensions (the file-name extension table wins those).
TLDS = frozenset("""
com net org io ru cn de uk co info biz gov edu mil onion xyz top site online
club me us eu fr it nl se no es pl br in au ca jp kr tw ch at be dk fi cz sk
hu ro bg gr pt ie il tr ua vn th my sg id ph hk ar cl mx pe za eg sa ae ir
""".split())

#: Extensions the file-name grammar accepts. ``com`` is intentionally absent:
#: in threat reports a bare ``name.com`` is a domain, not a DOS executable.
FILE_EXTENSIONS = frozenset("""
exe dll bat cmd ps1 vbs js jse wsf wsh scr pif msi msp doc docx docm xls xlsx
xlsm ppt pptx pdf rtf txt zip rar 7z tar gz bz2 jar apk dmg sh py pl rb elf
bin sys tmp dat lnk hta chm iso img cab swf ocx drv cpl
""".split())

_PATTERNS: list[tuple[EntityType, re.Pattern]] = [
    (
        EntityType.URL,
        re.compile(rf"{_SCHEME}(?:\[:\]|:)//[^\s<>\"'`]+", re.IGNORECASE),
    ),
    (
        EntityType.EMAIL,
        re.compile(
            rf"(?<![\w.+-])[A-Za-z0-9._%+-]+{_AT}(?:[A-Za-z0-9-]+{_DOT})+[A-Za-z]{{2,}}(?![\w-])",
            re.IGNORECASE,
        ),
    ),
    (
        EntityType.REGISTRY,
        re.compile(
            r"(?:HKEY_LOCAL_MACHINE|HKEY_CURRENT_USER|HKEY_CLASSES_ROOT|HKEY_USERS"
            r"|HKEY_CURRENT_CONFIG|HKLM|HKCU|HKCR|HKU)(?:\\[^\\\s'\"<>|,;)\]]+)+",
        ),
    ),
    (
        EntityType.FILE_PATH,
        re.compile(
            r"(?:[A-Za-z]:\\|\\\\[\w.$-]+\\|%[A-Za-z_]+%\\)"
            r"(?:[^\\/:*?\"<>|\s,;]+\\)*[^\\/:*?\"<>|\s,;]*[^\\/:*?\"<>|\s,;.]"
        ),
    ),
    (
        EntityType.FILE_PATH,
        re.compile(
            r"(?<![\w.])/(?:etc|usr|tmp|var|home|bin|opt|root|srv|dev|lib)"
            r"(?:/[^\s'\"<>|,;:)\]]+)+"
        ),
    ),
    (
        EntityType.IP,
        re.compile(rf"(?<![\w.]){_OCTET}(?:{_DOT}{_OCTET}){{3}}(?![\w.])"),
    ),
    (EntityType.HASH_SHA256, re.compile(r"(?<![0-9a-fA-F])[0-9a-fA-F]{64}(?![0-9a-fA-F])")),
    (EntityType.HASH_SHA1, re.compile(r"(?<![0-9a-fA-F])[0-9a-fA-F]{40}(?![0-9a-fA-F])")),
    (EntityType.HASH_MD5, re.compile(r"(?<![0-9a-fA-F])[0-9a-fA-F]{32}(?![0-9a-fA-F])")),
    (
        EntityType.FILE_NAME,
        re.compile(r"(?<![\w.\\/-])[\w][\w-]{0,80}\.([A-Za-z0-9]{1,5})(?![\w.])"),
    ),
    (
        EntityType.DOMAIN,
        re.compile(
            rf"(?<![\w.@-])(?:[A-Za-z0-9](?:[A-Za-z0-9-]{{0,61}}[A-Za-z0-9])?{_DOT})+"
            rf"([A-Za-z]{{2,}})(?![\w-])",
            re.IGNORECASE,
        ),
    ),
]

#: Overlap precedence, highest first; ties broken by longer match, then by
#: position. Documented in docs/extraction.md alongside the grammars.
_PRECEDENCE = [
    EntityType.URL,
    EntityType.EMAIL,
    EntityType.REGISTRY,
    EntityType.FILE_PATH,
    EntityType.IP,
    EntityType.HASH_SHA256,
    EntityType.HASH_SHA1,
    EntityType.HASH_MD5,
    EntityType.FILE_NAME,
    EntityType.DOMAIN,
]
_RANK = {t: i for i, t in enumerate(_PRECEDENCE)}

_TRAILING_JUNK = ".,;:!?)\"'»]}"


@dataclass(frozen=True)
class IocMatch:
    start: int
    end: int
    ioc_type: EntityType
    raw: str
    canonical: str


def _validated(etype: EntityType, start: int, end: int, raw: str, match: re.Match) -> IocMatch | None:
    if etype is EntityType.URL:
        while raw and raw[-1] in _TRAILING_JUNK:
            raw = raw[:-1]
            end -= 1
        if "." not in raw and "[.]" not in raw and "(.)" not in raw:
            return None
    elif etype is EntityType.FILE_NAME:
        if match.group(1).lower() not in FILE_EXTENSIONS:
            return None
    elif etype is EntityType.DOMAIN:
        if match.group(1).lower() not in TLDS:
            return None
    if end <= start:
        return None
    return IocMatch(start, end, etype, raw, refang(raw))


def find_iocs(text: str) -> list[IocMatch]:
    """All maximal IOC matches, overlap-resolved by the precedence table."""
    candidates: list[IocMatch] = []
    for etype, pattern in _PATTERNS:
        for m in pattern.finditer(text):
            hit = _validated(etype, m.start(), m.end(), m.group(0), m)
            if hit is not None:
                candidates.append(hit)
    candidates.sort(key=lambda c: (_RANK[c.ioc_type], -(c.end - c.start), c.start))
    chosen: list[IocMatch] = []
    for cand in candidates:
        if all(cand.end <= kept.start or cand.start >= kept.end for kept in chosen):
            chosen.append(cand)
    chosen.sort(key=lambda c: c.start)
    return chosen


@dataclass(frozen=True)
class ProtectedSpan:
    """One replaced IOC: where it sits in the surrogate text and in the original."""

    surrogate_span: tuple[int, int]
    original_span: tuple[int, int]
    original_surface: str
    canonical: str
    ioc_type: EntityType


@dataclass(frozen=True)
class ProtectedText:
    surrogate_text: str
    span_map: tuple[ProtectedSpan, ...]
    original_text: str

    def restore(self) -> str:
        """Reapply the span map; must reproduce the original byte-for-byte."""
        pieces = []
        cursor = 0
        for entry in self.span_map:
            s, e = entry.surrogate_span
            pieces.append(self.surrogate_text[cursor:s])
            pieces.append(entry.original_surface)
            cursor = e
        pieces.append(self.surrogate_text[cursor:])
        return "".join(pieces)


def protect_iocs(text: str) -> ProtectedText:
    """Replace every maximal IOC with the surrogate word.

    Defanged forms are matched as-is; the span map records both the raw
    surface (for restoration) and the refanged canonical form.
    """
    matches = find_iocs(text)
    pieces = []
    span_map = []
    cursor = 0
    out_len = 0
    for m in matches:
        gap = text[cursor : m.start]
        pieces.append(gap)
        out_len += len(gap)
        span_map.append(
            ProtectedSpan(
                surrogate_span=(out_len, out_len + len(SURROGATE)),
                original_span=(m.start, m.end),
                original_surface=m.raw,
                canonical=m.canonical,
                ioc_type=m.ioc_type,
            )
        )
        pieces.append(SURROGATE)
        out_len += len(SURROGATE)
        cursor = m.end
    pieces.append(text[cursor:])
    return ProtectedText(
        surrogate_text="".join(pieces),
        span_map=tuple(span_map),
        original_text=text,
    )
