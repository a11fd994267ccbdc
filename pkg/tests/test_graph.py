import numpy as np
import pytest

from firesense.graph import (EDGE_FEATURES, NODE_FEATURES, GraphBatch, MinMax, NormStats, StaticGraph,
                             denormalize, encode, fire_node_features, normalize)
from firesense.structgen import COLUMN, FirePoint, sample_fire_points


def test_feature_widths(small_structure, fire):
    g = encode(small_structure, fire)
    assert len(NODE_FEATURES) == 13 and len(EDGE_FEATURES) == 9
    assert g.node_attrs.shape == (len(small_structure.nodes), 13)
    assert g.edge_attrs.shape == (2 * len(small_structure.elements), 9)
    assert g.num_stories == small_structure.room_grid.count_z


def test_node_row_by_hand(small_structure):
    n = small_structure.nodes[5]
    fire = FirePoint(1.0, 2.0, 3.0, 2)
    row = encode(small_structure, fire).node_attrs[5]
    d = np.array([n.x - 1.0, n.y - 2.0, n.z - 3.0])
    expected = [n.x, n.y, n.z, n.h, 1.0, 2.0, 3.0, 2, *d, n.h - 2, np.linalg.norm(d)]
    assert np.allclose(row, expected)


def test_edges_duplicated_in_both_directions(small_structure, fire):
    g = encode(small_structure, fire)
    E = len(small_structure.elements)
    src, dst = g.edge_index
    assert np.array_equal(src[:E], dst[E:]) and np.array_equal(dst[:E], src[E:])
    assert np.array_equal(g.edge_attrs[:E], g.edge_attrs[E:])
    pos = small_structure.node_position()
    for k, e in enumerate(small_structure.elements):
        assert (src[k], dst[k]) == (pos[e.node_a], pos[e.node_b])
        row = g.edge_attrs[k]
        assert row[3] == pytest.approx(e.length)
        assert row[4] == e.floor
        assert row[7] == (1.0 if e.kind == COLUMN else 0.0)
        assert row[5:8].sum() == 1.0
        assert row[8] == e.gravity_load
        assert row[0] == small_structure.material.young_modulus_E0


def test_static_graph_reuse(small_structure):
    static = StaticGraph.from_structure(small_structure)
    f = sample_fire_points(small_structure, 1, 9)[0]
    assert np.array_equal(encode(small_structure, f, static).node_attrs, encode(small_structure, f).node_attrs)
    ext = static.node_ext
    assert np.array_equal(fire_node_features(ext, (*f.xyz, f.h_f)), encode(small_structure, f).node_attrs)


def test_minmax_roundtrip_and_constant_columns():
    rows = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [2.0, 5.0, 0.0]])
    mm = MinMax.fit(rows)
    out = mm.apply(rows)
    assert out.min() == 0.0 and out.max() == 1.0
    assert np.all(out[:, 1] == 0.0)
    assert np.allclose(mm.invert(out), rows)
    back = MinMax.from_dict(mm.to_dict())
    assert np.array_equal(back.lo, mm.lo)


def test_normalize_denormalize(structures):
    samples = [encode(s, sample_fire_points(s, 1, 0)[0]) for s in structures]
    stats = NormStats.fit(samples)
    n = normalize(samples[0], stats)
    assert n.node_attrs.min() >= 0 and n.node_attrs.max() <= 1
    assert np.allclose(denormalize(n, stats).node_attrs[:, stats.node.span > 0],
                       samples[0].node_attrs[:, stats.node.span > 0])
    assert NormStats.from_dict(stats.to_dict()).to_dict() == stats.to_dict()


def test_batch_offsets_and_masks(structures):
    samples = [encode(s, sample_fire_points(s, 1, 0)[0]) for s in structures[:3]]
    b = GraphBatch(samples)
    assert b.num_nodes == sum(s.num_nodes for s in samples)
    start = samples[0].num_nodes
    E0 = samples[0].edge_index.shape[1]
    assert np.array_equal(b.src[E0:E0 + 4], samples[1].edge_index[0][:4] + start)
    for layer in range(1, 8):
        nm = b.node_mask(layer)[:, 0]
        assert np.array_equal(nm == 1, b.stories[b.graph_id] >= layer)
    parts = b.split_nodes(np.arange(b.num_nodes))
    assert [len(p) for p in parts] == [s.num_nodes for s in samples]
    with pytest.raises(ValueError):
        GraphBatch([])
