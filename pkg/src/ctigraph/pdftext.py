"""Plain text extraction from simple PDFs.

Handles single-generation PDFs whose page content streams are uncompressed
or FlateDecode-compressed, pulling the string arguments of the Tj/TJ
text-showing operators in stream order. Layout-aware parsing is out of scope;
this exists so PDF payloads flow through the same parse interface as HTML.
"""

from __future__ import annotations

import re
import zlib
from base64 import a85decode

_STREAM = re.compile(rb"stream\r?\n(.*?)endstream", re.DOTALL)
_TJ = re.compile(rb"\((?:\\.|[^\\()])*\)\s*Tj|\[(?:[^\]\\]|\\.)*\]\s*TJ", re.DOTALL)
_LITERAL = re.compile(rb"\(((?:\\.|[^\\()])*)\)")

_ESCAPES = {
    b"n": b"\n", b"r": b"\r", b"t": b"\t", b"b": b"\b", b"f": b"\f",
    b"(": b"(", b")": b")", b"\\": b"\\",
}


def _unescape(raw: bytes) -> bytes:
    out = bytearray()
    i = 0
    while i < len(raw):
        ch = raw[i : i + 1]
        if ch == b"\\" and i + 1 < len(raw):
            nxt = raw[i + 1 : i + 2]
            if nxt.isdigit():
                octal = raw[i + 1 : i + 4]
                digits = re.match(rb"[0-7]{1,3}", octal)
                if digits:
                    out.append(int(digits.group(0), 8) & 0xFF)
                    i += 1 + len(digits.group(0))
                    continue
            out.extend(_ESCAPES.get(nxt, nxt))
            i += 2
        else:
            out.extend(ch)
            i += 1
    return bytes(out)


def pdf_text(blob: bytes) -> str:
    """Concatenated text-run content of every content stream, space-joined."""
    runs: list[str] = []
    for m in _STREAM.finditer(blob):
        data = m.group(1)
        # the governing dict is the last << ... >> before the stream keyword
        head = blob[max(0, m.start() - 512) : m.start()]
        params = head[head.rfind(b"<<") :] if b"<<" in head else b""
        try:
            if b"ASCII85Decode" in params:
                encoded = data.strip()
                if encoded.startswith(b"<~"):
                    encoded = encoded[2:]
                if encoded.endswith(b"~>"):
                    encoded = encoded[:-2]
                data = a85decode(encoded)
            if b"FlateDecode" in params:
                data = zlib.decompress(data)
        except (ValueError, zlib.error):
            continue
        for op in _TJ.finditer(data):
            for literal in _LITERAL.finditer(op.group(0)):
                text = _unescape(literal.group(1)).decode("latin-1")
                if text.strip():
                    runs.append(text)
    return " ".join(runs)
