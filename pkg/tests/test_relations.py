import pytest

from ctigraph.model import EntityMention, EntityType, Provenance
from ctigraph.relations import VerbLexicon, extract_relations
from ctigraph.textseg import protect_and_tokenize


def mention(text: str, surface: str, etype: EntityType, occurrence: int = 0) -> EntityMention:
    start = -1
    for _ in range(occurrence + 1):
        start = text.index(surface, start + 1)
    return EntityMention(
        surface=surface, etype=etype, confidence=1.0,
        provenance=Provenance.CRF, span=(start, start + len(surface)),
    )


class TestActiveVoice:
    def test_drop_relation(self):
        text = "WannaCry drops tasksche.exe on infected hosts."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "WannaCry", EntityType.REPORT_MALWARE),
            mention(text, "tasksche.exe", EntityType.FILE_NAME),
        ]
        rels = extract_relations(ts, entities)
        assert len(rels) == 1
        assert (rels[0].head, rels[0].tail, rels[0].verb) == (0, 1, "DROP")

    def test_inflected_verb_normalized(self):
        text = "The implant connected to 10.1.2.3 nightly."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "implant", EntityType.TOOL),
            mention(text, "10.1.2.3", EntityType.IP),
        ]
        rels = extract_relations(ts, entities)
        assert rels[0].verb == "CONNECT"


class TestPassiveVoice:
    def test_swap(self):
        text = "a.exe is downloaded by DarkHotel every week."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "a.exe", EntityType.FILE_NAME),
            mention(text, "DarkHotel", EntityType.THREAT_ACTOR),
        ]
        rels = extract_relations(ts, entities)
        assert len(rels) == 1
        # swapped: DarkHotel downloads a.exe
        assert (rels[0].head, rels[0].tail, rels[0].verb) == (1, 0, "DOWNLOAD")

    def test_active_with_by_later_not_swapped(self):
        text = "WannaCry drops tasksche.exe by design."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "WannaCry", EntityType.REPORT_MALWARE),
            mention(text, "tasksche.exe", EntityType.FILE_NAME),
        ]
        rels = extract_relations(ts, entities)
        assert (rels[0].head, rels[0].tail) == (0, 1)


class TestScopeRules:
    def test_cross_sentence_no_relation(self):
        text = "WannaCry spread quickly. tasksche.exe appeared everywhere."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "WannaCry", EntityType.REPORT_MALWARE),
            mention(text, "tasksche.exe", EntityType.FILE_NAME),
        ]
        assert extract_relations(ts, entities) == []

    def test_no_lexicon_verb_no_relation(self):
        text = "WannaCry resembles tasksche.exe somewhat."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "WannaCry", EntityType.REPORT_MALWARE),
            mention(text, "tasksche.exe", EntityType.FILE_NAME),
        ]
        assert extract_relations(ts, entities) == []

    def test_intervening_entity_blocks_pair(self):
        text = "CozyDuke uses mimikatz and drops stage2.dll daily."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "CozyDuke", EntityType.THREAT_ACTOR),
            mention(text, "mimikatz", EntityType.TOOL),
            mention(text, "stage2.dll", EntityType.FILE_NAME),
        ]
        rels = extract_relations(ts, entities)
        pairs = {(r.head, r.tail, r.verb) for r in rels}
        assert (0, 1, "USE") in pairs
        assert (1, 2, "DROP") in pairs
        assert not any(r.head == 0 and r.tail == 2 for r in rels)

    def test_verbs_only_from_lexicon(self):
        lexicon = VerbLexicon(("drop",))
        text = "WannaCry downloads stage2.dll then drops a.exe."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "WannaCry", EntityType.REPORT_MALWARE),
            mention(text, "stage2.dll", EntityType.FILE_NAME),
            mention(text, "a.exe", EntityType.FILE_NAME),
        ]
        rels = extract_relations(ts, entities, lexicon)
        assert {r.verb for r in rels} == {"DROP"}

    def test_head_tail_distinct_and_evidence_span(self):
        text = "WannaCry drops tasksche.exe on hosts."
        _, ts = protect_and_tokenize(text)
        entities = [
            mention(text, "WannaCry", EntityType.REPORT_MALWARE),
            mention(text, "tasksche.exe", EntityType.FILE_NAME),
        ]
        rel = extract_relations(ts, entities)[0]
        assert rel.head != rel.tail
        start, end = rel.evidence_span
        assert text[start:end].startswith("WannaCry")
        assert text[start:end].endswith("tasksche.exe")


class TestLexiconFile:
    def test_from_file(self, tmp_path):
        path = tmp_path / "verbs.txt"
        path.write_text("# relation verbs\ndrop\ndeploy\n")
        lexicon = VerbLexicon.from_file(path)
        assert lexicon.lemma("deploys") == "deploy"
        assert lexicon.lemma("dropped") == "drop"
        assert lexicon.lemma("resembles") is None
