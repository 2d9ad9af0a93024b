import random
import string

import pytest

from ctigraph.errors import EmptyDescription, ValidationError
from ctigraph.model import (
    AttrValue,
    EntityMention,
    EntityType,
    GraphEdge,
    GraphNode,
    OntologyGraph,
    Provenance,
    ReportKind,
    content_hash,
    node_id_for,
    normalize_description,
)
from helpers import make_doc


class TestNormalizeDescription:
    def test_trims_collapses_lowercases(self):
        assert normalize_description("  WannaCry ", EntityType.THREAT_ACTOR) == "wannacry"

    def test_internal_runs_collapse(self):
        assert normalize_description("Lazarus \t  Group", EntityType.THREAT_ACTOR) == "lazarus group"

    def test_file_path_case_preserved(self):
        assert (
            normalize_description("C:\\Windows\\a.EXE", EntityType.FILE_PATH)
            == "C:\\Windows\\a.EXE"
        )

    def test_registry_case_preserved(self):
        assert (
            normalize_description("HKLM\\Software\\X", EntityType.REGISTRY)
            == "HKLM\\Software\\X"
        )

    def test_empty_rejected(self):
        with pytest.raises(EmptyDescription):
            normalize_description("   \t ", EntityType.TOOL)

    def test_idempotent_on_random_strings(self):
        rng = random.Random(7)
        alphabet = string.ascii_letters + string.digits + "  \t\\/.:-_"
        for _ in range(1000):
            s = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 40)))
            if not s.strip():
                continue
            for etype in (EntityType.TOOL, EntityType.FILE_PATH):
                once = normalize_description(s, etype)
                assert normalize_description(once, etype) == once
                assert len(once) <= len(s)


class TestReportDoc:
    def test_content_hash_is_pure_function_of_bytes(self):
        a = content_hash([("text/html", b"abc"), ("text/html", b"def")])
        b = content_hash([("text/plain", b"abc"), ("x", b"def")])
        assert a == b  # content-type tags do not participate

    def test_validate_checks_hash_and_payloads(self):
        doc = make_doc()
        doc.validate()
        bad = make_doc()
        object.__setattr__(bad, "content_hash", "0" * 64)
        with pytest.raises(ValidationError):
            bad.validate()


class TestEntityMention:
    def test_span_bounds(self):
        m = EntityMention("x", EntityType.IP, 1.0, Provenance.REGEX, span=(0, 5))
        m.validate(10, set())
        with pytest.raises(ValidationError):
            m.validate(3, set())

    def test_exactly_one_anchor(self):
        m = EntityMention("x", EntityType.IP, 1.0, Provenance.REGEX)
        with pytest.raises(ValidationError):
            m.validate(10, set())
        both = EntityMention("x", EntityType.IP, 1.0, Provenance.REGEX,
                             span=(0, 1), field_ref="ioc_table")
        with pytest.raises(ValidationError):
            both.validate(10, {"ioc_table"})

    def test_field_ref_must_exist(self):
        m = EntityMention("x", EntityType.IP, 1.0, Provenance.STRUCTURED, field_ref="nope")
        with pytest.raises(ValidationError):
            m.validate(10, {"ioc_table"})
        m2 = EntityMention("x", EntityType.IP, 1.0, Provenance.STRUCTURED, field_ref="ioc_table")
        m2.validate(10, {"ioc_table"})


class TestReportKind:
    def test_closed_set(self):
        with pytest.raises(ValueError):
            ReportKind("advisory")

    def test_kind_maps_to_entity_type(self):
        assert ReportKind.MALWARE.entity_type is EntityType.REPORT_MALWARE


def _node(etype: EntityType, desc: str) -> GraphNode:
    return GraphNode(node_id=node_id_for(etype, desc), etype=etype, description=desc)


class TestOntologyGraph:
    def test_name_index_bijection(self):
        g = OntologyGraph()
        n1 = _node(EntityType.REPORT_MALWARE, "wannacry")
        g.upsert_node(n1)
        assert g.lookup(EntityType.REPORT_MALWARE, "wannacry") is n1
        assert len(g.name_index) == len(g.nodes) == 1

    def test_edges_require_existing_nodes(self):
        g = OntologyGraph()
        g.upsert_node(_node(EntityType.REPORT_MALWARE, "wannacry"))
        edge = GraphEdge("missing", "missing2", "DROP", "r1")
        with pytest.raises(ValidationError):
            g.add_edge(edge)

    def test_duplicate_edge_identity_rejected(self):
        g = OntologyGraph()
        a = _node(EntityType.REPORT_MALWARE, "wannacry")
        b = _node(EntityType.FILE_NAME, "tasksche.exe")
        g.upsert_node(a)
        g.upsert_node(b)
        edge = GraphEdge(a.node_id, b.node_id, "DROP", "r1")
        assert g.add_edge(edge) is True
        assert g.add_edge(edge) is False
        # same fact from another report stays countable
        assert g.add_edge(GraphEdge(a.node_id, b.node_id, "DROP", "r2")) is True
        assert g.edge_count() == 2

    def test_empty_description_rejected(self):
        g = OntologyGraph()
        with pytest.raises(ValidationError):
            g.upsert_node(GraphNode(node_id="n1", etype=EntityType.TOOL, description=""))

    def test_attribute_union_keeps_sources(self):
        node = _node(EntityType.REPORT_MALWARE, "wannacry")
        node.add_attribute("platform", "windows", "r1")
        node.add_attribute("platform", "windows", "r2")
        node.add_attribute("platform", "linux", "r2")
        assert node.attribute_values("platform") == ["windows", "linux"]
        assert node.attributes["platform"][0] == AttrValue("windows", ("r1", "r2"))
