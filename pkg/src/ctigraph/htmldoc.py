"""Minimal HTML element tree with a CSS-selector subset.

Supports what the shipped source templates need: tag, ``.class``, ``#id``,
``[attr]``/``[attr=value]``, descendant and ``>`` combinators, and comma
groups. Text extraction is fixed and documented because every downstream
span offset depends on it: block elements start a new line, inline elements
flow, whitespace runs collapse to one space, blank lines drop.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser

VOID_TAGS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)
BLOCK_TAGS = frozenset(
    """p div h1 h2 h3 h4 h5 h6 li ul ol table thead tbody tr td th br hr
    section article header footer pre blockquote dl dt dd nav aside figure
    figcaption form fieldset address main title caption""".split()
)
SKIP_TAGS = frozenset("script style noscript template".split())


@dataclass
class Element:
    tag: str
    attrs: dict[str, str] = field(default_factory=dict)
    children: list = field(default_factory=list)  # Element or str
    parent: "Element | None" = None

    @property
    def classes(self) -> list[str]:
        return self.attrs.get("class", "").split()

    def iter_elements(self):
        """Descendant elements in document order, self excluded."""
        for child in self.children:
            if isinstance(child, Element):
                yield child
                yield from child.iter_elements()

    def own_text(self) -> str:
        return "".join(c for c in self.children if isinstance(c, str))


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = Element("#document")
        self.stack = [self.root]

    def handle_starttag(self, tag, attrs):
        el = Element(tag, {k: (v or "") for k, v in attrs}, parent=self.stack[-1])
        self.stack[-1].children.append(el)
        if tag not in VOID_TAGS:
            self.stack.append(el)

    def handle_startendtag(self, tag, attrs):
        el = Element(tag, {k: (v or "") for k, v in attrs}, parent=self.stack[-1])
        self.stack[-1].children.append(el)

    def handle_endtag(self, tag):
        # tolerant: pop to the nearest matching open tag, ignore strays
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return

    def handle_data(self, data):
        if data:
            self.stack[-1].children.append(data)


def parse_html(text: str) -> Element:
    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    return builder.root


def visible_text(el: Element) -> str:
    """Deterministic text rendering used for body_text and field values."""
    lines: list[str] = []
    buf: list[str] = []

    def flush():
        line = " ".join("".join(buf).split())
        buf.clear()
        if line:
            lines.append(line)

    def walk(node: Element):
        for child in node.children:
            if isinstance(child, str):
                buf.append(child)
            elif child.tag in SKIP_TAGS:
                continue
            elif child.tag in BLOCK_TAGS:
                flush()
                walk(child)
                flush()
            else:
                walk(child)

    walk(el)
    flush()
    return "\n".join(lines)


# --- selector engine ---------------------------------------------------------

@dataclass(frozen=True)
class _Simple:
    tag: str | None
    el_id: str | None
    classes: tuple[str, ...]
    attrs: tuple[tuple[str, str | None], ...]


_SIMPLE_PART = re.compile(
    r"(?P<tag>[a-zA-Z][\w-]*|\*)"
    r"|\.(?P<cls>[\w-]+)"
    r"|#(?P<id>[\w-]+)"
    r"|\[(?P<attr>[\w-]+)(?:=(?P<quote>[\"']?)(?P<val>[^\"'\]]*)(?P=quote))?\]"
)


class SelectorError(ValueError):
    pass


def _parse_compound(text: str) -> _Simple:
    tag = None
    el_id = None
    classes: list[str] = []
    attrs: list[tuple[str, str | None]] = []
    pos = 0
    while pos < len(text):
        m = _SIMPLE_PART.match(text, pos)
        if not m:
            raise SelectorError(f"cannot parse selector part {text[pos:]!r}")
        if m.group("tag"):
            tag = None if m.group("tag") == "*" else m.group("tag").lower()
        elif m.group("cls"):
            classes.append(m.group("cls"))
        elif m.group("id"):
            el_id = m.group("id")
        else:
            attrs.append((m.group("attr").lower(), m.group("val")))
        pos = m.end()
    return _Simple(tag, el_id, tuple(classes), tuple(attrs))


def parse_selector(selector: str) -> list[list[tuple[str, _Simple]]]:
    """Comma groups of (combinator, compound) chains; combinator for the
    first compound is ' ' and is ignored."""
    groups = []
    for group_text in selector.split(","):
        group_text = group_text.strip()
        if not group_text:
            raise SelectorError(f"empty selector in {selector!r}")
        tokens = re.split(r"\s*(>)\s*|\s+", group_text)
        chain: list[tuple[str, _Simple]] = []
        combinator = " "
        for token in tokens:
            if token is None or token == "":
                continue
            if token == ">":
                combinator = ">"
                continue
            chain.append((combinator, _parse_compound(token)))
            combinator = " "
        if not chain:
            raise SelectorError(f"empty selector in {selector!r}")
        groups.append(chain)
    return groups


def _matches_simple(el: Element, simple: _Simple) -> bool:
    if simple.tag is not None and el.tag != simple.tag:
        return False
    if simple.el_id is not None and el.attrs.get("id") != simple.el_id:
        return False
    if any(cls not in el.classes for cls in simple.classes):
        return False
    for name, value in simple.attrs:
        if name not in el.attrs:
            return False
        if value is not None and el.attrs[name] != value:
            return False
    return True


def _chain_matches(el: Element, chain: list[tuple[str, _Simple]]) -> bool:
    combinator, simple = chain[-1]
    if not _matches_simple(el, simple):
        return False
    if len(chain) == 1:
        return True
    rest = chain[:-1]
    parent = el.parent
    if combinator == ">":
        return parent is not None and parent.tag != "#document" and _chain_matches(parent, rest)
    while parent is not None and parent.tag != "#document":
        if _chain_matches(parent, rest):
            return True
        parent = parent.parent
    return False


def select(root: Element, selector: str) -> list[Element]:
    """All matching descendants of ``root`` in document order."""
    groups = parse_selector(selector)
    out = []
    for el in root.iter_elements():
        if any(_chain_matches(el, chain) for chain in groups):
            out.append(el)
    return out


def select_one(root: Element, selector: str) -> Element | None:
    found = select(root, selector)
    return found[0] if found else None
