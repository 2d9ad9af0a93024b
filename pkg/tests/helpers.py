"""Shared test utilities: random IOC-injected text and small builders."""

from __future__ import annotations

import random

from ctigraph.model import (
    CtiRecord,
    EntityMention,
    EntityType,
    Provenance,
    ReportDoc,
    ReportKind,
    content_hash,
)

WORDS = (
    "the attacker then contacted remote infrastructure and staged further "
    "payloads before moving laterally across hosts while operators watched "
    "network telemetry for unusual beacons during the campaign"
).split()

IOC_SAMPLES = [
    ("192.168.10.5", EntityType.IP),
    ("10.0.0.77", EntityType.IP),
    ("198[.]51[.]100[.]23", EntityType.IP),
    ("http://evil-site.com/payload.bin", EntityType.URL),
    ("hxxps://bad[.]example[.]org/a.exe", EntityType.URL),
    ("dropper.exe", EntityType.FILE_NAME),
    ("stage2.dll", EntityType.FILE_NAME),
    ("update.ps1", EntityType.FILE_NAME),
    ("C:\\Windows\\Temp\\svc.exe", EntityType.FILE_PATH),
    ("/etc/cron.d/backdoor", EntityType.FILE_PATH),
    ("HKEY_LOCAL_MACHINE\\Software\\Run", EntityType.REGISTRY),
    ("ops@phish-mail.com", EntityType.EMAIL),
    ("admin(at)bad-domain[.]net", EntityType.EMAIL),
    ("command-center.ru", EntityType.DOMAIN),
    ("cdn[.]mal-distribution[.]com", EntityType.DOMAIN),
    ("44d88612fea8a8f36de82e1278abb02f", EntityType.HASH_MD5),
    ("3395856ce81f2b7382dee72602f798b642f14140", EntityType.HASH_SHA1),
    ("275a021bbfb6489e54d471899f7db9d1663fc695ec2fe2a2c4538aabf651fd0f", EntityType.HASH_SHA256),
]


def random_ioc_text(rng: random.Random, n_iocs: int = 3, n_words: int = 20) -> str:
    """Prose with IOCs spliced in at word boundaries."""
    words = [rng.choice(WORDS) for _ in range(n_words)]
    for _ in range(n_iocs):
        ioc, _ = rng.choice(IOC_SAMPLES)
        words.insert(rng.randrange(len(words) + 1), ioc)
    sentence_len = rng.randrange(6, 12)
    pieces = []
    for i, word in enumerate(words):
        pieces.append(word)
        if (i + 1) % sentence_len == 0:
            pieces[-1] += "."
    text = " ".join(pieces)
    return text if text.endswith(".") else text + "."


def make_doc(report_id: str = "r1", source_id: str = "src", title: str = "Sample",
             payloads: list[tuple[str, bytes]] | None = None) -> ReportDoc:
    payloads = payloads or [("text/html", b"<html><body>hello</body></html>")]
    return ReportDoc(
        report_id=report_id,
        source_id=source_id,
        title=title,
        raw_payloads=tuple(payloads),
        fetched_at=1700000000.0,
        origin_locator=f"file:///tmp/{report_id}.html",
        content_hash=content_hash(payloads),
    )


def make_record(report_id: str = "r1", body: str = "WannaCry drops tasksche.exe.",
                kind: ReportKind = ReportKind.MALWARE) -> CtiRecord:
    return CtiRecord(
        report_id=report_id,
        report_kind=kind,
        vendor="testlab",
        structured_fields={"title": ["WannaCry"]},
        body_text=body,
        entities=[
            EntityMention(
                surface="WannaCry", etype=EntityType.REPORT_MALWARE, confidence=1.0,
                provenance=Provenance.CRF, span=(0, 8),
            )
        ],
    )
