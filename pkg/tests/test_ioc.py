import random

import pytest

from ctigraph.ioc import ProtectedText, find_iocs, protect_iocs, refang
from ctigraph.model import EntityType
from ctigraph.textseg import protect_and_tokenize, tokenize
from helpers import random_ioc_text


class TestProtection:
    def test_ip_replaced_by_surrogate(self):
        pt = protect_iocs("connects to 192.168.1.1 daily")
        assert pt.surrogate_text == "connects to something daily"
        assert len(pt.span_map) == 1
        entry = pt.span_map[0]
        assert entry.ioc_type is EntityType.IP
        assert entry.original_surface == "192.168.1.1"

    def test_defanged_url_refanged_canonical(self):
        pt = protect_iocs("payload at hxxp://evil[.]com/a.exe")
        assert len(pt.span_map) == 1
        entry = pt.span_map[0]
        assert entry.ioc_type is EntityType.URL
        assert entry.original_surface == "hxxp://evil[.]com/a.exe"
        assert entry.canonical == "http://evil.com/a.exe"

    def test_no_ioc_identity(self):
        text = "The campaign used spearphishing against ministries."
        pt = protect_iocs(text)
        assert pt.surrogate_text == text
        assert pt.span_map == ()

    def test_restore_is_exact(self):
        text = "Seen at hxxp://bad[.]org/x.exe and 10.0.0.1, md5 " + "a" * 32 + "."
        pt = protect_iocs(text)
        assert pt.restore() == text

    def test_span_map_ordered_and_disjoint(self):
        pt = protect_iocs("10.0.0.1 then 10.0.0.2 then evil.com")
        spans = [e.surrogate_span for e in pt.span_map]
        assert len(spans) == 3
        assert spans == sorted(spans)
        for (_, a_end), (b_start, _) in zip(spans, spans[1:]):
            assert a_end <= b_start


class TestGrammarPrecedence:
    def test_md5(self):
        hits = find_iocs("44d88612fea8a8f36de82e1278abb02f")
        assert [h.ioc_type for h in hits] == [EntityType.HASH_MD5]

    def test_sha1_and_sha256_not_shredded(self):
        sha1 = "a" * 40
        sha256 = "b" * 64
        hits = find_iocs(f"{sha1} {sha256}")
        assert [h.ioc_type for h in hits] == [EntityType.HASH_SHA1, EntityType.HASH_SHA256]

    def test_registry_key(self):
        hits = find_iocs(r"writes HKEY_LOCAL_MACHINE\Software\X at boot")
        assert hits[0].ioc_type is EntityType.REGISTRY
        assert hits[0].raw == r"HKEY_LOCAL_MACHINE\Software\X"

    def test_extension_beats_domain(self):
        hits = find_iocs("runs update.exe quietly")
        assert [h.ioc_type for h in hits] == [EntityType.FILE_NAME]

    def test_plain_domain(self):
        hits = find_iocs("beacons to evil.com hourly")
        assert [h.ioc_type for h in hits] == [EntityType.DOMAIN]

    def test_url_wins_over_inner_domain_and_file(self):
        hits = find_iocs("fetches http://evil.com/a.exe then exits")
        assert [h.ioc_type for h in hits] == [EntityType.URL]

    def test_email(self):
        hits = find_iocs("mail bad(at)phish[.]net for keys")
        assert hits[0].ioc_type is EntityType.EMAIL
        assert hits[0].canonical == "bad@phish.net"

    def test_windows_path(self):
        hits = find_iocs(r"copies itself to C:\Windows\Temp\svc.exe then runs")
        assert hits[0].ioc_type is EntityType.FILE_PATH
        assert hits[0].raw == r"C:\Windows\Temp\svc.exe"

    def test_refang_table(self):
        assert refang("hxxps://a[.]b(.)c[dot]d/e") == "https://a.b.c.d/e"
        assert refang("x[at]y[.]z") == "x@y.z"


class TestTokenization:
    def test_two_sentences(self):
        _, ts = protect_and_tokenize("It drops a.exe. Then it exits.")
        assert ts.n_sentences == 2

    def test_protected_ip_single_token(self):
        _, ts = protect_and_tokenize("Host 192.168.1.1 beacons out.")
        ioc_tokens = [t for t in ts.tokens if t.is_ioc]
        assert len(ioc_tokens) == 1
        assert ioc_tokens[0].surface == "192.168.1.1"
        assert ts.text[ioc_tokens[0].start : ioc_tokens[0].end] == "192.168.1.1"

    def test_abbreviation_not_split(self):
        _, ts = protect_and_tokenize("Used by e.g. Lazarus Group. Next sentence here.")
        assert ts.n_sentences == 2

    def test_reconstruction_on_random_texts(self):
        rng = random.Random(13)
        for _ in range(500):
            text = random_ioc_text(rng, n_iocs=rng.randrange(0, 5))
            pt, ts = protect_and_tokenize(text)
            assert pt.restore() == text
            rebuilt = []
            cursor = 0
            for tok in ts.tokens:
                rebuilt.append(text[cursor : tok.start])
                rebuilt.append(tok.surface)
                assert text[tok.start : tok.end] == tok.surface
                cursor = tok.end
            rebuilt.append(text[cursor:])
            assert "".join(rebuilt) == text

    def test_no_token_crosses_ioc_boundary(self):
        rng = random.Random(29)
        for _ in range(200):
            text = random_ioc_text(rng, n_iocs=4)
            pt, ts = protect_and_tokenize(text)
            ioc_spans = [e.original_span for e in pt.span_map]
            for tok in ts.tokens:
                for start, end in ioc_spans:
                    inside = tok.start >= start and tok.end <= end
                    outside = tok.end <= start or tok.start >= end
                    exact = (tok.start, tok.end) == (start, end)
                    assert exact or outside, (tok, (start, end), text)
                    if exact:
                        assert tok.is_ioc
