"""Two-stage emotion semantic graph: construction, fusion, graph encoding.

Stage one links each annotated object to its attribute and to the global
adjective node. A cross-attention step fuses the stage-one relations with
an emotion word into one semantic feature, which stage two attaches as a
sink node receiving an edge from every other node. A small graph
convolution stack then reads the sink node out as the graph feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emoshift import nn
from emoshift.autodiff import Tensor, relu, select_row, softmax
from emoshift.dataset import ImageRecord

NODE_KINDS = ("object", "attribute", "global_attr", "semantic")


def _feature_array(feature) -> np.ndarray:
    return feature.data if isinstance(feature, Tensor) else np.asarray(feature)


@dataclass
class GraphNode:
    node_id: int
    kind: str
    # numpy vector for word nodes; may be a Tensor for the semantic node so
    # gradients can flow from the graph encoding back into the fusion step
    feature: object

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")


@dataclass
class EmotionGraph:
    nodes: list[GraphNode]
    edges: list[tuple[int, int]]
    stage: str  # "one" or "two"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.stage not in ("one", "two"):
            raise ValueError(f"stage must be 'one' or 'two', got {self.stage!r}")
        ids = {n.node_id for n in self.nodes}
        if len(ids) != len(self.nodes):
            raise ValueError("duplicate node ids")
        n_sem = sum(1 for n in self.nodes if n.kind == "semantic")
        if self.stage == "one" and n_sem != 0:
            raise ValueError("stage-one graph must not contain a semantic node")
        if self.stage == "two" and n_sem != 1:
            raise ValueError(f"stage-two graph must contain exactly one semantic node, got {n_sem}")
        for src, dst in self.edges:
            if src == dst:
                raise ValueError(f"self-loop at node {src}")
            if src not in ids or dst not in ids:
                raise ValueError(f"edge ({src}, {dst}) references a missing node")

    @property
    def semantic_node(self) -> GraphNode:
        for n in self.nodes:
            if n.kind == "semantic":
                return n
        raise ValueError("graph has no semantic node")


class AttentionParams(nn.Module):
    """Projections for the fusion attention: query dim d_t, key/value dim 2*d_t.

    Scale follows the projected key width. identity() keeps values equal to
    the raw relation features (the query is duplicated to match key width),
    which the fusion-step unit examples rely on.
    """

    def __init__(self, w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray,
                 trainable: bool = True):
        w_q, w_k, w_v = (np.asarray(a, dtype=np.float64) for a in (w_q, w_k, w_v))
        if w_q.shape[1] != w_k.shape[1]:
            raise ValueError("query and key projections must share output width")
        if w_k.shape[0] != w_v.shape[0]:
            raise ValueError("key and value projections must share input width")
        self.w_q = Tensor(w_q, requires_grad=trainable)
        self.w_k = Tensor(w_k, requires_grad=trainable)
        self.w_v = Tensor(w_v, requires_grad=trainable)

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.w_k.shape[1])

    @classmethod
    def seeded(cls, d_t: int, seed: int, d_out: int | None = None) -> "AttentionParams":
        d_out = d_out or d_t
        rng = np.random.default_rng(np.random.SeedSequence([seed, 201]))
        s_q = 1.0 / np.sqrt(d_t)
        s_kv = 1.0 / np.sqrt(2 * d_t)
        return cls(rng.normal(scale=s_q, size=(d_t, d_out)),
                   rng.normal(scale=s_kv, size=(2 * d_t, d_out)),
                   rng.normal(scale=s_kv, size=(2 * d_t, d_out)))

    @classmethod
    def identity(cls, d_t: int) -> "AttentionParams":
        eye = np.eye(2 * d_t)
        dup = np.concatenate([np.eye(d_t), np.eye(d_t)], axis=1)
        return cls(dup, eye, eye, trainable=False)


def build_stage1_graph(record: ImageRecord, text_encoder) -> EmotionGraph:
    """One node per object and attribute plus a global node; 2k edges.

    Pair i yields node ids 2i (object) and 2i+1 (attribute); the global
    adjective takes id 2k. Each object points at its attribute and at the
    global node. Repeated pairs keep separate nodes.
    """
    record.validate()
    k = len(record.pairs)
    nodes: list[GraphNode] = []
    edges: list[tuple[int, int]] = []
    global_id = 2 * k
    for i, (obj, attr) in enumerate(record.pairs):
        nodes.append(GraphNode(2 * i, "object", text_encoder.embed(obj)))
        nodes.append(GraphNode(2 * i + 1, "attribute", text_encoder.embed(attr)))
        edges.append((2 * i, 2 * i + 1))
        edges.append((2 * i, global_id))
    nodes.append(GraphNode(global_id, "global_attr", text_encoder.embed(record.global_attribute)))
    return EmotionGraph(nodes=nodes, edges=edges, stage="one")


def relation_features(g1: EmotionGraph) -> np.ndarray:
    """Per-edge concatenated (src, dst) features; the edge-less fallback is
    the global node feature duplicated to the same width."""
    feats = {n.node_id: _feature_array(n.feature) for n in g1.nodes}
    if g1.edges:
        return np.stack([np.concatenate([feats[s], feats[d]]) for s, d in g1.edges])
    g = next(_feature_array(n.feature) for n in g1.nodes if n.kind == "global_attr")
    return np.concatenate([g, g])[None, :]


def inject_emotion_semantics(g1: EmotionGraph, emotion_word: str, params: AttentionParams,
                             text_encoder, return_weights: bool = False):
    """Cross-attention of the emotion word over the graph's relation features.

    Keys and values are the projected per-edge concatenations; the query is
    the projected emotion word embedding. Returns the fused semantic
    feature (a Tensor carrying gradient into the projections), and the
    attention weights when asked.
    """
    if g1.stage != "one":
        raise ValueError("fusion expects a stage-one graph")
    f_oa = Tensor(relation_features(g1))
    q = Tensor(text_encoder.embed(emotion_word)) @ params.w_q
    keys = f_oa @ params.w_k
    values = f_oa @ params.w_v
    scores = (keys @ q) * params.scale
    weights = softmax(scores, axis=-1)
    f_sem = weights @ values
    if return_weights:
        return f_sem, weights
    return f_sem


def build_stage2_graph(g1: EmotionGraph, f_sem) -> EmotionGraph:
    """Append the semantic sink node; every existing node gains an edge to it."""
    if g1.stage != "one":
        raise ValueError("expected a stage-one graph")
    sem_id = max(n.node_id for n in g1.nodes) + 1
    nodes = list(g1.nodes) + [GraphNode(sem_id, "semantic", f_sem)]
    edges = list(g1.edges) + [(n.node_id, sem_id) for n in g1.nodes]
    return EmotionGraph(nodes=nodes, edges=edges, stage="two")


def normalized_adjacency(g: EmotionGraph) -> np.ndarray:
    """Symmetric Kipf normalization of A + A^T + I over dense node indexing."""
    order = sorted(n.node_id for n in g.nodes)
    pos = {nid: i for i, nid in enumerate(order)}
    n = len(order)
    a = np.zeros((n, n))
    for s, d in g.edges:
        a[pos[s], pos[d]] = 1.0
    ahat = a + a.T + np.eye(n)
    dinv = 1.0 / np.sqrt(ahat.sum(axis=1))
    return ahat * dinv[:, None] * dinv[None, :]


class GCNEncoder(nn.Module):
    """Graph convolution stack reading out the semantic node at dim d.

    Word nodes enter through one shared input projection (d_t to d); the
    semantic node has its own (its width is set by the value projection).
    Propagation uses the symmetrized, self-looped, degree-normalized
    adjacency with a ReLU after every layer.
    """

    def __init__(self, d_t: int, d: int, seed: int, layers: int = 2,
                 d_sem: int | None = None, readout: str = "semantic"):
        if readout not in ("semantic", "mean"):
            raise ValueError(f"readout must be 'semantic' or 'mean', got {readout!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
        self.w_in = nn.Linear(d_t, d, rng)
        self.w_sem = nn.Linear(d_sem or d_t, d, rng)
        self.layers = [nn.Linear(d, d, rng) for _ in range(layers)]
        self.readout = readout

    def __call__(self, g2: EmotionGraph) -> Tensor:
        if g2.stage != "two":
            raise ValueError("graph encoding expects a stage-two graph")
        norm = Tensor(normalized_adjacency(g2))
        rows = []
        sem_pos = 0
        for pos, node in enumerate(sorted(g2.nodes, key=lambda n: n.node_id)):
            feat = node.feature if isinstance(node.feature, Tensor) else Tensor(
                np.asarray(node.feature, dtype=np.float64))
            if node.kind == "semantic":
                rows.append(self.w_sem(feat))
                sem_pos = pos
            else:
                rows.append(self.w_in(feat))
        h = nn.stack_rows(rows)
        for layer in self.layers:
            h = relu(layer(norm @ h))
        if self.readout == "mean":
            return h.mean(axis=0)
        return select_row(h, sem_pos)


def encode_graph(g2: EmotionGraph, gcn: GCNEncoder) -> Tensor:
    """Dim-d semantic graph feature (Tensor; .data for the plain vector)."""
    return gcn(g2)
