import pytest

from conftest import FIXTURES, REPO, fixture_config, fixture_corpus
from ctigraph.errors import BuildError
from ctigraph.model import ReportKind
from ctigraph.parsers import (
    GENERIC_TEMPLATE,
    SourceTemplate,
    detect_source,
    load_templates,
    parse,
)
from ctigraph.pipeline import check, port
from helpers import make_doc


@pytest.fixture(scope="module")
def templates():
    return load_templates(REPO / "sources")


@pytest.fixture(scope="module")
def fixture_records(templates, tmp_path_factory):
    config = fixture_config(tmp_path_factory.mktemp("parse"))
    docs = check(port(fixture_corpus(config)))
    records = {}
    for doc in docs:
        rec = parse(doc, detect_source(doc, templates))
        key = doc.origin_locator.rsplit("/", 1)[-1].replace(".html", "")
        key = key.replace("__page1", "").replace("__page2", "")
        records[key] = rec
    return records


class TestTemplates:
    def test_three_templates_load(self, templates):
        assert set(templates) == {"fixture-encyclopedia", "fixture-vulndb", "fixture-blog"}

    def test_detect_by_source_id(self, templates):
        doc = make_doc(source_id="fixture-encyclopedia")
        assert detect_source(doc, templates).source_id == "fixture-encyclopedia"

    def test_unknown_source_falls_back_to_generic(self, templates):
        doc = make_doc(source_id="mystery-feed")
        assert detect_source(doc, templates) is GENERIC_TEMPLATE

    def test_duplicate_source_id_rejected(self, tmp_path):
        content = (REPO / "sources" / "fixture_blog.toml").read_text()
        (tmp_path / "a.toml").write_text(content)
        (tmp_path / "b.toml").write_text(content)
        with pytest.raises(BuildError):
            load_templates(tmp_path)

    def test_bad_selector_rejected(self):
        with pytest.raises(BuildError):
            SourceTemplate(
                source_id="x", title_selector="h1::first", body_selectors=("body",)
            ).validate()


class TestParseAgainstGold:
    def test_titles_kinds_vendors(self, fixture_records, gold):
        for name, expected in gold["extraction"].items():
            rec = fixture_records[name]
            assert rec.structured_fields["title"] == [expected["title"]], name
            assert rec.report_kind == ReportKind(expected["kind"]), name
            assert rec.vendor == expected["vendor"], name

    def test_structured_fields(self, fixture_records, gold):
        for name, expected in gold["extraction"].items():
            rec = fixture_records[name]
            for field, values in expected["structured"].items():
                assert rec.structured_fields.get(field) == values, (name, field)

    def test_aliases_list_example(self, fixture_records):
        assert fixture_records["wannacry"].structured_fields["aliases"] == [
            "WCry", "WannaCrypt",
        ]

    def test_script_text_never_leaks(self, fixture_records):
        assert "trackPageView" not in fixture_records["wannacry"].body_text

    def test_cve_marker_sets_vulnerability_kind(self, fixture_records):
        assert fixture_records["cve-2017-0144"].report_kind is ReportKind.VULNERABILITY

    def test_default_kind_logged(self, fixture_records):
        rec = fixture_records["dukes-return"]
        assert rec.report_kind is ReportKind.ATTACK
        assert any("defaulted" in note for _, note in rec.extraction_log)

    def test_multipage_body_concatenated(self, fixture_records):
        body = fixture_records["bank-heist"].body_text
        assert "Lazarus Group targeted SWIFT" in body
        assert "Investigators recovered evtdiag.exe" in body


class TestParsePurity:
    def test_same_inputs_same_record(self, templates, tmp_path):
        config = fixture_config(tmp_path)
        docs = check(port(fixture_corpus(config)))
        doc = docs[0]
        template = detect_source(doc, templates)
        a = parse(doc, template)
        b = parse(doc, template)
        assert a.to_plain() == b.to_plain()

    def test_title_mismatch_downgrades_not_drops(self, templates):
        doc = make_doc(
            source_id="fixture-blog",
            payloads=[("text/html", b"<html><body><p>" + b"word " * 60 + b"</p></body></html>")],
        )
        rec = parse(doc, templates["fixture-blog"])
        assert rec.body_text  # fallback extraction still ran
        assert any("template-mismatch" in note for _, note in rec.extraction_log)
        assert rec.structured_fields["title"] == [doc.title]

    def test_plain_text_payload(self):
        doc = make_doc(payloads=[("text/plain", b"Just words from a mailing list post.")])
        rec = parse(doc, GENERIC_TEMPLATE)
        assert rec.body_text == "Just words from a mailing list post."


class TestPdfPayload:
    def test_pdf_text_extraction(self, tmp_path):
        reportlab = pytest.importorskip("reportlab.pdfgen.canvas")
        pdf_path = tmp_path / "advisory.pdf"
        canvas = reportlab.Canvas(str(pdf_path))
        canvas.drawString(72, 720, "Emotet downloads stage2.dll from a known host.")
        canvas.save()
        doc = make_doc(payloads=[("application/pdf", pdf_path.read_bytes())])
        rec = parse(doc, GENERIC_TEMPLATE)
        assert "Emotet downloads stage2.dll" in rec.body_text
