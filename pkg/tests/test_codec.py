import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctigraph import codec
from ctigraph.crf import CrfModel
from ctigraph.errors import MalformedEncoding, TypeMismatch
from ctigraph.model import (
    EntityType,
    GraphEdge,
    GraphNode,
    OntologyGraph,
    node_id_for,
)
from helpers import make_doc, make_record


def graphs_equal_fieldwise(a: OntologyGraph, b: OntologyGraph) -> bool:
    """Independent comparator: checks every field of every node and edge."""
    if set(a.nodes) != set(b.nodes):
        return False
    for nid, node in a.nodes.items():
        other = b.nodes[nid]
        if (node.etype, node.description, node.source_report_ids) != (
            other.etype, other.description, other.source_report_ids,
        ):
            return False
        if set(node.attributes) != set(other.attributes):
            return False
        for key in node.attributes:
            left = sorted((av.value, tuple(sorted(av.sources))) for av in node.attributes[key])
            right = sorted((av.value, tuple(sorted(av.sources))) for av in other.attributes[key])
            if left != right:
                return False
    left_edges = sorted((e.src, e.dst, e.verb, e.source_report_id, e.attributes) for e in a.edges)
    right_edges = sorted((e.src, e.dst, e.verb, e.source_report_id, e.attributes) for e in b.edges)
    return left_edges == right_edges


def build_sample_graph() -> OntologyGraph:
    g = OntologyGraph()
    malware = GraphNode(
        node_id=node_id_for(EntityType.REPORT_MALWARE, "wannacry"),
        etype=EntityType.REPORT_MALWARE,
        description="wannacry",
    )
    malware.add_attribute("platform", "windows", "r1")
    file_a = GraphNode(
        node_id=node_id_for(EntityType.FILE_NAME, "tasksche.exe"),
        etype=EntityType.FILE_NAME,
        description="tasksche.exe",
        source_report_ids={"r1"},
    )
    vendor = GraphNode(
        node_id=node_id_for(EntityType.VENDOR, "testlab"),
        etype=EntityType.VENDOR,
        description="testlab",
    )
    for n in (malware, file_a, vendor):
        g.upsert_node(n)
    g.add_edge(GraphEdge(malware.node_id, file_a.node_id, "DROP", "r1"))
    g.add_edge(GraphEdge(malware.node_id, vendor.node_id, "REPORTED_BY", "r1"))
    return g


class TestRoundTrips:
    def test_report_doc_round_trip(self):
        doc = make_doc(payloads=[("text/html", b"<p>one</p>")])
        assert codec.deserialize(codec.serialize(doc)) == doc

    def test_report_doc_json_round_trip(self):
        doc = make_doc(payloads=[("text/html", b"\x00\xffbinary")])
        assert codec.from_json(codec.to_json(doc)) == doc

    def test_cti_record_round_trip(self):
        rec = make_record()
        assert codec.deserialize(codec.serialize(rec)).to_plain() == rec.to_plain()

    def test_graph_round_trip_against_comparator(self):
        g = build_sample_graph()
        restored = codec.deserialize(codec.serialize(g), OntologyGraph)
        assert graphs_equal_fieldwise(g, restored)
        via_json = codec.from_json(codec.to_json(g), "ontology_graph")
        assert graphs_equal_fieldwise(g, via_json)

    def test_crf_model_round_trip(self):
        model = CrfModel(
            labels=("O", "B-tool"),
            vocab={"bias": 0, "w0=uses": 1},
            emission_weights=np.array([[0.5, -1.25], [0.0, 3.5]]),
            transition_weights=np.array([[0.1, 0.2], [-0.3, 0.0]]),
            meta={"seed": 1, "l2": 0.001, "epochs": 2},
        )
        assert codec.deserialize(codec.serialize(model), CrfModel) == model
        assert codec.from_json(codec.to_json(model), CrfModel) == model


class TestDeterminism:
    def test_equal_records_encode_identically(self):
        a = make_record()
        b = make_record()
        # same content, different construction order for the field map
        b.structured_fields = {}
        b.structured_fields["title"] = ["WannaCry"]
        assert codec.serialize(a) == codec.serialize(b)

    def test_map_keys_sorted(self):
        one = codec.encode_value({"b": 1, "a": 2})
        two = codec.encode_value({"a": 2, "b": 1})
        assert one == two


_plain_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2**62), max_value=2**62)
    | st.floats(allow_nan=False)
    | st.text(max_size=20)
    | st.binary(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=12,
)


class TestValueRoundTripProperty:
    @settings(max_examples=300, deadline=None)
    @given(value=_plain_values)
    def test_decode_inverts_encode(self, value):
        def normalize(v):
            return [normalize(x) for x in v] if isinstance(v, (list, tuple)) else (
                {k: normalize(x) for k, x in v.items()} if isinstance(v, dict) else v
            )

        assert codec.decode_value(codec.encode_value(value)) == normalize(value)

    @settings(max_examples=100, deadline=None)
    @given(value=_plain_values)
    def test_envelope_round_trip(self, value):
        assert codec.deserialize(codec.serialize(value), "value") == value


class TestErrors:
    def test_truncated_buffer_reports_offset(self):
        data = codec.serialize(make_doc())
        with pytest.raises(MalformedEncoding) as err:
            codec.deserialize(data[: len(data) // 2])
        assert 0 < err.value.offset <= len(data)

    def test_type_mismatch(self):
        data = codec.serialize(make_record())
        with pytest.raises(TypeMismatch):
            codec.deserialize(data, "report_doc")

    def test_unknown_type_tag(self):
        data = bytearray(codec.serialize(make_doc()))
        data[4] = 0xEE
        with pytest.raises(MalformedEncoding):
            codec.deserialize(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(MalformedEncoding) as err:
            codec.deserialize(b"XXXX\x01\x00")
        assert err.value.offset == 0

    def test_trailing_bytes(self):
        data = codec.serialize(make_doc()) + b"\x00"
        with pytest.raises(MalformedEncoding):
            codec.deserialize(data)

    def test_unknown_value_kind_never_defaults(self):
        with pytest.raises(MalformedEncoding):
            codec.decode_value(b"\x7f")
