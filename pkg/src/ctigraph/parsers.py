"""Source-dependent parsing of report payloads into CTI records.

Each known source ships a template (a data file under ``sources/``) that
names CSS selectors for the title, the body, and structured fields, plus
marker rules that decide the report kind. Unknown sources fall back to a
generic body-only template, so a checker-approved report is never dropped.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BuildError
from .htmldoc import Element, parse_html, parse_selector, select, visible_text
from .model import CtiRecord, ReportDoc, ReportKind
from .pdftext import pdf_text

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

VALUE_KINDS = ("text", "list", "table-kv")


@dataclass(frozen=True)
class FieldRule:
    name: str
    selector: str
    value_kind: str = "text"


@dataclass(frozen=True)
class KindRule:
    marker: str
    kind: ReportKind


@dataclass(frozen=True)
class SourceTemplate:
    source_id: str
    title_selector: str
    body_selectors: tuple[str, ...]
    field_rules: tuple[FieldRule, ...] = ()
    kind_rules: tuple[KindRule, ...] = ()
    vendor: str | None = None
    default_kind: ReportKind = ReportKind.ATTACK

    def validate(self) -> None:
        try:
            parse_selector(self.title_selector)
            for sel in self.body_selectors:
                parse_selector(sel)
            for rule in self.field_rules:
                parse_selector(rule.selector)
        except ValueError as err:
            raise BuildError(f"template {self.source_id}: {err}") from err
        for rule in self.field_rules:
            if rule.value_kind not in VALUE_KINDS:
                raise BuildError(
                    f"template {self.source_id}: bad value kind {rule.value_kind!r}"
                )

    @classmethod
    def from_plain(cls, plain: dict) -> "SourceTemplate":
        template = cls(
            source_id=plain["source_id"],
            title_selector=plain["title_selector"],
            body_selectors=tuple(plain["body_selectors"]),
            field_rules=tuple(
                FieldRule(r["name"], r["selector"], r.get("value_kind", "text"))
                for r in plain.get("field_rules", [])
            ),
            kind_rules=tuple(
                KindRule(r["marker"], ReportKind(r["kind"]))
                for r in plain.get("kind_rules", [])
            ),
            vendor=plain.get("vendor"),
            default_kind=ReportKind(plain.get("default_kind", "attack")),
        )
        template.validate()
        return template


GENERIC_TEMPLATE = SourceTemplate(
    source_id="generic",
    title_selector="title, h1",
    body_selectors=("body",),
)


def load_templates(directory: str | Path) -> dict[str, SourceTemplate]:
    """All ``*.toml`` templates in a directory; duplicate source_ids refuse to load."""
    templates: dict[str, SourceTemplate] = {}
    for path in sorted(Path(directory).glob("*.toml")):
        with open(path, "rb") as fh:
            plain = tomllib.load(fh)
        if "source_id" not in plain:  # other curated data (alias tables) may live here
            continue
        template = SourceTemplate.from_plain(plain)
        if template.source_id in templates:
            raise BuildError(f"duplicate template for source {template.source_id!r}")
        templates[template.source_id] = template
    return templates


def detect_source(doc: ReportDoc, templates: dict[str, SourceTemplate]) -> SourceTemplate:
    return templates.get(doc.source_id, GENERIC_TEMPLATE)


def _decode_payload(content_type: str, blob: bytes) -> tuple[Element | None, str]:
    """(HTML tree, plain text); exactly one side is meaningful."""
    if content_type == "application/pdf":
        return None, pdf_text(blob)
    text = blob.decode("utf-8", errors="replace")
    if content_type == "text/plain":
        return None, text
    return parse_html(text), ""


def _field_values(tree: Element, rule: FieldRule) -> list[str]:
    matches = select(tree, rule.selector)
    if rule.value_kind == "text":
        for el in matches:
            text = visible_text(el)
            if text:
                return [text.replace("\n", " ")]
        return []
    if rule.value_kind == "list":
        values = []
        for el in matches:
            text = visible_text(el)
            if text:
                values.append(text.replace("\n", " "))
        return values
    # table-kv: each row becomes "key: value" from its cells
    values = []
    for table in matches:
        for row in select(table, "tr"):
            cells = [c for c in row.children if isinstance(c, Element) and c.tag in ("td", "th")]
            texts = [" ".join(visible_text(c).split()) for c in cells]
            texts = [t for t in texts if t]
            if len(texts) >= 2:
                values.append(f"{texts[0]}: {' '.join(texts[1:])}")
    return values


def parse(doc: ReportDoc, template: SourceTemplate) -> CtiRecord:
    """Pure conversion of one report into a CTI record.

    A failing title selector downgrades to body-only extraction with a log
    entry; the record is never dropped.
    """
    pages = [_decode_payload(ct, blob) for ct, blob in doc.raw_payloads]

    title = ""
    for tree, _ in pages:
        if tree is None:
            continue
        for el in select(tree, template.title_selector):
            text = " ".join(visible_text(el).split())
            if text:
                title = text
                break
        if title:
            break

    template_ok = bool(title) or all(tree is None for tree, _ in pages)
    if not title:
        title = doc.title

    body_parts = []
    for tree, plain in pages:
        if tree is None:
            if plain.strip():
                body_parts.append(" ".join(plain.split()))
            continue
        matched = False
        for sel in template.body_selectors:
            for el in select(tree, sel):
                text = visible_text(el)
                if text:
                    body_parts.append(text)
                    matched = True
        if not matched:
            text = visible_text(tree)
            if text:
                body_parts.append(text)
    body_text = "\n".join(body_parts)

    structured: dict[str, list[str]] = {}
    if title:
        structured["title"] = [title]
    if template_ok:
        for rule in template.field_rules:
            values: list[str] = []
            for tree, _ in pages:
                if tree is not None:
                    values.extend(_field_values(tree, rule))
            if values:
                structured[rule.name] = values

    haystack = (title + "\n" + body_text).lower()
    kind = None
    for rule in template.kind_rules:
        if rule.marker.lower() in haystack:
            kind = rule.kind
            break

    record = CtiRecord(
        report_id=doc.report_id,
        report_kind=kind or template.default_kind,
        vendor=template.vendor,
        structured_fields=structured,
        body_text=body_text,
    )
    if not template_ok:
        record.log("parser", "template-mismatch: title selector matched nothing; body-only extraction")
    if kind is None:
        record.log("parser", f"no kind marker matched; defaulted to {template.default_kind.value}")
    record.log("parser", f"template={template.source_id}")
    return record
