import pytest

from ctigraph.htmldoc import SelectorError, parse_html, select, select_one, visible_text


SAMPLE = """
<html><head><title>Page Title</title>
<script>var x = "SCRIPT NOISE";</script>
<style>.a { color: red }</style></head>
<body>
  <h1 class="headline">WannaCry</h1>
  <div id="meta">
    <ul class="aliases"><li>WCry</li><li>WannaCrypt</li></ul>
  </div>
  <div class="content">
    <p>First <b>paragraph</b> text.</p>
    <p>Second paragraph.</p>
    <table class="iocs"><tr><th>MD5</th><td>abc</td></tr><tr><td>SHA1</td><td>def</td></tr></table>
  </div>
  <div class="content extra"><p>Third.</p></div>
</body></html>
"""


class TestSelectors:
    def test_tag(self):
        root = parse_html(SAMPLE)
        assert len(select(root, "p")) == 3

    def test_class_and_compound(self):
        root = parse_html(SAMPLE)
        assert len(select(root, "div.content")) == 2
        assert len(select(root, "div.content.extra")) == 1

    def test_id(self):
        root = parse_html(SAMPLE)
        assert select_one(root, "#meta").tag == "div"

    def test_descendant_and_child(self):
        root = parse_html(SAMPLE)
        assert len(select(root, ".aliases li")) == 2
        assert len(select(root, "ul > li")) == 2
        assert select(root, "body > li") == []

    def test_comma_groups_document_order(self):
        root = parse_html(SAMPLE)
        tags = [el.tag for el in select(root, "title, h1")]
        assert tags == ["title", "h1"]

    def test_attribute_selector(self):
        root = parse_html('<a href="x">one</a><a>two</a><a href="y">three</a>')
        assert len(select(root, "a[href]")) == 2
        assert len(select(root, 'a[href=y]')) == 1

    def test_invalid_selector_raises(self):
        with pytest.raises(SelectorError):
            select(parse_html("<p>x</p>"), "p::first-line")


class TestVisibleText:
    def test_script_and_style_removed(self):
        root = parse_html(SAMPLE)
        text = visible_text(root)
        assert "SCRIPT NOISE" not in text
        assert "color" not in text

    def test_blocks_become_lines_inline_flows(self):
        root = parse_html("<div><p>First <b>paragraph</b> text.</p><p>Second.</p></div>")
        assert visible_text(root) == "First paragraph text.\nSecond."

    def test_whitespace_collapsed(self):
        root = parse_html("<p>spaced   \n  out\ttext</p>")
        assert visible_text(root) == "spaced out text"

    def test_unclosed_tags_tolerated(self):
        root = parse_html("<p>one<p>two<br>three")
        assert "one" in visible_text(root) and "two" in visible_text(root)
