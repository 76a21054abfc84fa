"""Two-stage semantic graph: counts, hand-traced attention, GCN properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import fd_grad

from emoshift.autodiff import Tensor
from emoshift.dataset import EmotionLabel, ImageRecord
from emoshift.graph import (AttentionParams, EmotionGraph, GCNEncoder, GraphNode,
                            build_stage1_graph, build_stage2_graph, encode_graph,
                            inject_emotion_semantics, normalized_adjacency)


class FakeText:
    """Hand-set word embeddings for tracing."""

    def __init__(self, table, dim):
        self.table = table
        self.dim = dim

    def embed(self, w):
        if w in self.table:
            return np.asarray(self.table[w], dtype=np.float64)
        rng = np.random.default_rng(abs(hash(w)) % (2 ** 32))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)


def record_with_pairs(k, emotion=EmotionLabel.AWE):
    return ImageRecord(f"r{k}", "x.png", emotion, "joyful",
                       pairs=tuple((f"o{i}", f"a{i}") for i in range(k)))


@pytest.fixture(scope="module")
def te3():
    return FakeText({}, 3)


class TestStageCounts:
    @settings(deadline=None, max_examples=60)
    @given(k=st.integers(0, 14), seed=st.integers(0, 10**6))
    def test_stage1_and_stage2_counts(self, k, seed):
        te = FakeText({}, 3)
        rec = record_with_pairs(k)
        g1 = build_stage1_graph(rec, te)
        assert len(g1.nodes) == 2 * k + 1
        assert len(g1.edges) == 2 * k
        g2 = build_stage2_graph(g1, f_sem=np.zeros(6))
        assert len(g2.nodes) == len(g1.nodes) + 1
        assert len(g2.edges) == len(g1.edges) + (2 * k + 1)
        assert g1.stage == "one" and g2.stage == "two"

    def test_node_kinds_and_ids(self, te3):
        g1 = build_stage1_graph(record_with_pairs(2), te3)
        kinds = {n.node_id: n.kind for n in g1.nodes}
        assert kinds == {0: "object", 1: "attribute", 2: "object",
                         3: "attribute", 4: "global_attr"}
        assert sorted(g1.edges) == [(0, 1), (0, 4), (2, 3), (2, 4)]

    def test_stage1_rejects_semantic_node(self, te3):
        with pytest.raises(ValueError):
            EmotionGraph(nodes=[GraphNode(0, "semantic", np.zeros(3))],
                         edges=[], stage="one")

    def test_rejects_self_loop(self, te3):
        with pytest.raises(ValueError):
            EmotionGraph(nodes=[GraphNode(0, "object", np.zeros(3)),
                                GraphNode(1, "global_attr", np.zeros(3))],
                         edges=[(0, 0)], stage="one")


class TestAttentionInjection:
    def test_single_edge_identity_projection_returns_that_edge(self, te3):
        pid = AttentionParams.identity(3)
        g = EmotionGraph(
            nodes=[GraphNode(0, "object", te3.embed("dog")),
                   GraphNode(1, "attribute", te3.embed("playful")),
                   GraphNode(2, "global_attr", te3.embed("joyful"))],
            edges=[(0, 1)], stage="one")
        f_sem = inject_emotion_semantics(g, "awe", pid, te3)
        foa = np.concatenate([te3.embed("dog"), te3.embed("playful")])
        np.testing.assert_allclose(f_sem.data, foa, atol=1e-12)

    def test_duplicate_edges_share_weight_equally(self, te3):
        pid = AttentionParams.identity(3)
        g = EmotionGraph(
            nodes=[GraphNode(0, "object", te3.embed("dog")),
                   GraphNode(1, "attribute", te3.embed("playful")),
                   GraphNode(2, "object", te3.embed("dog")),
                   GraphNode(3, "attribute", te3.embed("playful")),
                   GraphNode(4, "global_attr", te3.embed("joyful"))],
            edges=[(0, 1), (2, 3)], stage="one")
        f_sem, w = inject_emotion_semantics(g, "awe", pid, te3,
                                            return_weights=True)
        foa = np.concatenate([te3.embed("dog"), te3.embed("playful")])
        np.testing.assert_allclose(f_sem.data, foa, atol=1e-12)
        np.testing.assert_allclose(w.data, 0.5, atol=1e-12)

    def test_hand_set_projections_match_scalar_arithmetic(self):
        te2 = FakeText({"dog": [1.0, 0.0], "playful": [0.0, 1.0],
                        "cat": [0.5, 0.5], "lazy": [1.0, 1.0],
                        "joyful": [0.2, 0.8], "awe": [0.6, 0.4]}, 2)
        g = EmotionGraph(
            nodes=[GraphNode(0, "object", te2.embed("dog")),
                   GraphNode(1, "attribute", te2.embed("playful")),
                   GraphNode(2, "object", te2.embed("cat")),
                   GraphNode(3, "attribute", te2.embed("lazy")),
                   GraphNode(4, "global_attr", te2.embed("joyful"))],
            edges=[(0, 1), (2, 3)], stage="one")
        w_q = np.array([[0.3, -0.2], [0.1, 0.5]])
        w_k = np.array([[0.2, 0.1], [-0.1, 0.4], [0.3, -0.2], [0.0, 0.25]])
        w_v = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, -0.5], [0.2, 0.3]])
        _, wh = inject_emotion_semantics(g, "awe", AttentionParams(w_q, w_k, w_v),
                                         te2, return_weights=True)
        q = np.array([0.6, 0.4]) @ w_q
        k1 = np.array([1.0, 0.0, 0.0, 1.0]) @ w_k
        k2 = np.array([0.5, 0.5, 1.0, 1.0]) @ w_k
        s1 = (q[0] * k1[0] + q[1] * k1[1]) / math.sqrt(2.0)
        s2 = (q[0] * k2[0] + q[1] * k2[1]) / math.sqrt(2.0)
        z = math.exp(s1) + math.exp(s2)
        np.testing.assert_allclose(wh.data, [math.exp(s1) / z, math.exp(s2) / z],
                                   atol=1e-9)
        assert abs(float(wh.data.sum()) - 1.0) < 1e-9

    def test_edgeless_graph_falls_back_to_duplicated_global(self, te3):
        g10 = build_stage1_graph(record_with_pairs(0), te3)
        f0 = inject_emotion_semantics(g10, "awe", AttentionParams.identity(3), te3)
        gfeat = te3.embed("joyful")
        np.testing.assert_allclose(f0.data, np.concatenate([gfeat, gfeat]),
                                   atol=1e-12)


class TestNormalizedAdjacency:
    def test_symmetric_and_self_looped(self, te3):
        g2 = build_stage2_graph(build_stage1_graph(record_with_pairs(2), te3),
                                f_sem=np.zeros(6))
        a_hat = normalized_adjacency(g2)
        assert a_hat.shape == (6, 6)
        np.testing.assert_allclose(a_hat, a_hat.T, atol=1e-12)
        assert np.all(np.diag(a_hat) > 0)

    def test_single_node_is_identity(self):
        g = EmotionGraph(nodes=[GraphNode(0, "semantic", np.zeros(4))],
                         edges=[], stage="two")
        np.testing.assert_allclose(normalized_adjacency(g), np.eye(1), atol=1e-12)


class TestGCN:
    def test_single_node_identity_weights_give_identity(self):
        gcn = GCNEncoder(d_t=4, d=4, seed=0, layers=1)
        gcn.w_sem.weight.data = np.eye(4)
        gcn.w_sem.bias.data = np.zeros(4)
        gcn.layers[0].weight.data = np.eye(4)
        gcn.layers[0].bias.data = np.zeros(4)
        feat = np.array([0.3, 0.0, 1.2, 0.7])  # nonnegative: relu passes it
        g = EmotionGraph(nodes=[GraphNode(0, "semantic", feat)], edges=[],
                         stage="two")
        np.testing.assert_allclose(encode_graph(g, gcn).data, feat, atol=1e-12)

    def test_readout_invariant_to_node_relabeling(self, te3):
        g2 = build_stage2_graph(build_stage1_graph(record_with_pairs(2), te3),
                                f_sem=np.zeros(6))
        gcn = GCNEncoder(d_t=3, d=5, seed=1, layers=2, d_sem=6)
        base = encode_graph(g2, gcn).data
        perm = {0: 3, 1: 0, 2: 5, 3: 1, 4: 4, 5: 2}
        g2p = EmotionGraph(
            nodes=[GraphNode(perm[n.node_id], n.kind, n.feature) for n in g2.nodes],
            edges=[(perm[s], perm[d]) for s, d in g2.edges], stage="two")
        np.testing.assert_allclose(encode_graph(g2p, gcn).data, base, atol=1e-12)

    def test_gradient_wrt_semantic_feature(self, te3):
        g1 = build_stage1_graph(record_with_pairs(2), te3)
        gcn = GCNEncoder(d_t=3, d=5, seed=1, layers=2, d_sem=6)
        x0 = np.array([0.2, -0.3, 0.5, 0.1, -0.2, 0.4])

        def f(a):
            g = build_stage2_graph(g1, f_sem=a)
            return float((encode_graph(g, gcn).data ** 2).sum())

        xt = Tensor(x0.copy(), requires_grad=True)
        (encode_graph(build_stage2_graph(g1, f_sem=xt), gcn) ** 2.0).sum().backward()
        num = fd_grad(f, x0.copy())
        rel = np.max(np.abs(xt.grad - num) / (np.abs(num) + 1e-8))
        assert rel < 1e-5

    def test_gradient_wrt_word_feature(self, te3):
        g2 = build_stage2_graph(build_stage1_graph(record_with_pairs(2), te3),
                                f_sem=np.zeros(6))
        gcn = GCNEncoder(d_t=3, d=5, seed=1, layers=2, d_sem=6)
        wf0 = np.array([0.4, -0.1, 0.3])

        def swap(feature):
            nodes = [GraphNode(n.node_id, n.kind,
                               feature if n.node_id == 0 else n.feature)
                     for n in g2.nodes]
            return EmotionGraph(nodes=nodes, edges=list(g2.edges), stage="two")

        wt = Tensor(wf0.copy(), requires_grad=True)
        (encode_graph(swap(wt), gcn) ** 2.0).sum().backward()
        num = fd_grad(
            lambda a: float((encode_graph(swap(a), gcn).data ** 2).sum()),
            wf0.copy())
        rel = np.max(np.abs(wt.grad - num) / (np.abs(num) + 1e-8))
        assert rel < 1e-5
