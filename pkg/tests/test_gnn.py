import numpy as np
import pytest

from firesense import autodiff as ad
from firesense.autodiff import Tensor
from firesense.errors import DataEmpty, LayerOverflow
from firesense.gnn import (GnnConfig, MidrModel, ModelBundle, TrainConfig, gnn_forward, pool, predict_midr,
                           predict_node_idr, split_by_structure, train_two_step)
from firesense.graph import GraphBatch, GraphSample, StaticGraph, encode
from firesense.structgen import generate_structure, room_centers, sample_fire_points

from gradcheck import numeric_grad
from helpers import disjoint_copies, labeled_corpus, permute_edges, permute_nodes


@pytest.fixture(scope="module")
def model():
    return MidrModel(GnnConfig.small(), seed=3)


@pytest.fixture(scope="module")
def sample():
    s = generate_structure(8, counts=(3, 2, 3))
    return encode(s, sample_fire_points(s, 1, 1)[0])


@pytest.fixture(scope="module")
def corpus():
    return labeled_corpus(12, 4, seed=1)


def test_parameter_counts_by_construction():
    m = MidrModel(GnnConfig.small())
    enc = (13 * 32 + 32 + 32 * 32 + 32) + (9 * 32 + 32 + 32 * 32 + 32)
    layer = (64 * 64 + 64 + 64 * 32 + 32) + (32 * 64 + 64 + 64 * 32 + 32)
    zeta = 64 * 32 + 32 + 32 * 32 + 32
    heads = 33 + 65
    assert m.num_parameters() == enc + 7 * layer + zeta + heads
    off = MidrModel(GnnConfig.small(edge_update=False))
    assert m.num_parameters() - off.num_parameters() == zeta
    assert MidrModel(GnnConfig.large()).num_parameters() > 3 * m.num_parameters()


def test_node_permutation(model, sample):
    perm = np.random.default_rng(0).permutation(sample.num_nodes)
    swapped = permute_nodes(sample, perm)
    assert abs(predict_midr(model, sample) - predict_midr(model, swapped)) <= 1e-10
    a = predict_node_idr(model, sample)
    b = predict_node_idr(model, swapped)
    assert np.max(np.abs(a[perm] - b)) <= 1e-10


def test_edge_reordering(model, sample):
    perm = np.random.default_rng(1).permutation(sample.edge_index.shape[1])
    a = predict_node_idr(model, sample)
    b = predict_node_idr(model, permute_edges(sample, perm))
    assert np.max(np.abs(a - b)) <= 1e-10
    assert len(a) == sample.num_nodes


def test_zero_head_gives_zero_predictions(sample):
    m = MidrModel(GnnConfig.small(), seed=1)
    for p in m.head1.parameters():
        p.data = np.zeros_like(p.data)
    assert np.all(predict_node_idr(m, sample) == 0.0)


def test_disjoint_copies_pool_identically(model, sample):
    assert predict_midr(model, disjoint_copies(sample)) == pytest.approx(predict_midr(model, sample), abs=1e-10)
    b1, b2 = GraphBatch([sample]), GraphBatch([disjoint_copies(sample)])
    p1 = pool(gnn_forward(model.backbone, b1)[0], b1).data
    p2 = pool(gnn_forward(model.backbone, b2)[0], b2).data
    assert np.allclose(p1, p2, atol=1e-12)


def _single_node(num_stories=1):
    g = generate_structure(0).room_grid
    return GraphSample(np.ones((1, 13)), np.zeros((0, 9)), np.zeros((2, 0), dtype=int), num_stories,
                       np.array([0]), g)


def test_single_node_pooling(model):
    s = _single_node()
    b = GraphBatch([s])
    v, _ = gnn_forward(model.backbone, b)
    pooled = pool(v, b).data[0]
    assert np.array_equal(pooled[:32], pooled[32:])


def test_isolated_node_gets_gamma_of_zero(model):
    b = GraphBatch([_single_node(1)])
    v, _ = gnn_forward(model.backbone, b)
    v0 = model.backbone.node_encoder(Tensor(b.node_x)).data
    expected = v0 + model.backbone.gamma[0](Tensor(np.zeros((1, 32)))).data
    assert np.allclose(v.data, expected, atol=1e-14)


def test_depth_limited_by_stories(model):
    s = generate_structure(2, counts=(2, 3, 2))
    sample = encode(s, sample_fire_points(s, 1, 0)[0])
    m = MidrModel(GnnConfig.small(), seed=5)
    b = GraphBatch([sample])
    loss = ad.sum(ad.square(m.graph_outputs(b)))
    for p in m.parameters():
        p.grad = None
    loss.backward()
    for k in range(1, 8):
        grads = [p.grad for p in m.backbone.layer_parameters(k)]
        if k <= 2:
            assert any(g is not None and np.any(g != 0) for g in grads)
        else:
            assert all(g is None or np.all(g == 0) for g in grads)


def test_depth_rule_in_mixed_batch():
    tall = generate_structure(3, counts=(2, 2, 4))
    short = generate_structure(4, counts=(2, 2, 2))
    m = MidrModel(GnnConfig.small(), seed=2)
    ts = encode(tall, sample_fire_points(tall, 1, 0)[0])
    ss = encode(short, sample_fire_points(short, 1, 0)[0])
    # the short graph's outputs must not depend on layers 3 and 4
    alone = predict_midr(m, ss)
    batch = GraphBatch([ss, ts])
    with ad.no_grad():
        mixed = m.predict_batch(batch)[0]
    assert mixed == pytest.approx(alone, abs=1e-12)


def test_layer_overflow(model, sample):
    deep = GraphSample(sample.node_attrs, sample.edge_attrs, sample.edge_index, 8, sample.node_ids,
                       sample.room_grid)
    with pytest.raises(LayerOverflow):
        predict_midr(model, deep)


def test_edge_update_off_keeps_edge_embeddings(sample):
    m = MidrModel(GnnConfig.small(edge_update=False), seed=0)
    trace = []
    gnn_forward(m.backbone, GraphBatch([sample]), trace=trace)
    assert len(trace) == sample.num_stories + 1
    assert all(np.array_equal(t.data, trace[0].data) for t in trace)
    m_on = MidrModel(GnnConfig.small(), seed=0)
    trace = []
    gnn_forward(m_on.backbone, GraphBatch([sample]), trace=trace)
    assert not np.array_equal(trace[-1].data, trace[0].data)


def test_midr_tensor_matches_predict_at_room_centers(model):
    s = generate_structure(6, counts=(2, 2, 3))
    static = StaticGraph.from_structure(s)
    centers = room_centers(s)[:4]
    pts = Tensor(np.array([c.xyz for c in centers]))
    diff = model.midr_tensor([static] * 4, pts).data[:, 0]
    direct = [predict_midr(model, encode(s, c, static)) for c in centers]
    assert np.allclose(diff, direct, atol=1e-10)


def test_midr_gradient_wrt_fire_point(model):
    s = generate_structure(6, counts=(2, 2, 3))
    static = StaticGraph.from_structure(s)
    p0 = np.array([[1.3, 2.1, 4.0]])
    pt = Tensor(p0.copy(), requires_grad=True)
    model.midr_tensor([static], pt).backward()
    num = numeric_grad(lambda x: model.midr_tensor([static], Tensor(x)).item(), p0)
    assert np.all(np.abs(pt.grad - num) <= 1e-6 + 1e-4 * np.abs(num))


def test_split_by_structure():
    tr, te = split_by_structure(list(range(10)) * 3, 0.2, 0)
    assert len(te) == 2 and len(tr) == 8 and not tr & te
    assert split_by_structure(range(10), 0.2, 0) == (tr, te)


def test_empty_dataset():
    with pytest.raises(DataEmpty):
        train_two_step(MidrModel(), [])


@pytest.mark.parametrize("method", ["proposed", "strawman1", "strawman2"])
def test_training_descends_and_roundtrips(method, corpus, tmp_path):
    m = MidrModel(GnnConfig.small(), seed=0, method=method)
    bundle = train_two_step(m, corpus, TrainConfig(epochs=4, head_epochs=4, finetune_epochs=2, patience=5))
    for step, hist in bundle.history.items():
        assert min(hist["val"][1:], default=hist["val"][0]) <= hist["val"][0]
    first = next(iter(bundle.history.values()))
    assert min(first["val"]) < first["val"][0]
    path = tmp_path / "m.bundle"
    bundle.save(path)
    back = MidrModel.from_bundle(ModelBundle.load(path))
    s0 = corpus[0].sample
    assert predict_midr(back, s0) == predict_midr(m, s0)
    if method == "strawman2":
        assert predict_midr(m, s0) == pytest.approx(predict_node_idr(m, s0).max(), rel=1e-12)


def test_constant_targets(corpus):
    import copy
    items = copy.deepcopy(corpus)
    for it in items:
        it.midr = 1.75
    m = MidrModel(GnnConfig.small(), seed=0, method="strawman1")
    train_two_step(m, items, TrainConfig(epochs=2))
    assert predict_midr(m, items[0].sample) == pytest.approx(1.75, abs=1e-3)
