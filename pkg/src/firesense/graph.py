"""Graph encoding of a (structure, fire point) pair for the GNN.

Node rows: ``[x, y, z, h, x_f, y_f, z_f, h_f, x-x_f, y-y_f, z-z_f, h-h_f, L_s]``.
Edge rows: ``[E0, f_y, hardening, length, floor, is_x, is_y, is_z, gravity_load]``.
Each element becomes two directed edges carrying the same attributes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Segments
from .structgen import BEAM_X, BEAM_Y, COLUMN, FirePoint, RoomGrid, Structure

NODE_FEATURES = ("x", "y", "z", "h", "x_f", "y_f", "z_f", "h_f",
                 "dx", "dy", "dz", "dh", "L_s")
EDGE_FEATURES = ("E0", "f_y", "hardening", "length", "floor",
                 "dir_x", "dir_y", "dir_z", "gravity_load")
N_NODE_FEATURES = len(NODE_FEATURES)
N_EDGE_FEATURES = len(EDGE_FEATURES)
_ONEHOT = {BEAM_X: (1.0, 0.0, 0.0), BEAM_Y: (0.0, 1.0, 0.0), COLUMN: (0.0, 0.0, 1.0)}


@dataclass
class StaticGraph:
    """Fire-independent part of the encoding."""

    node_ext: np.ndarray  # N x 4 (x, y, z, h)
    edge_attrs: np.ndarray  # 2E x 9
    edge_index: np.ndarray  # 2 x 2E (src, dst)
    num_stories: int
    node_ids: np.ndarray
    room_grid: RoomGrid

    @classmethod
    def from_structure(cls, s: Structure) -> "StaticGraph":
        pos = s.node_position()
        node_ext = np.array([[n.x, n.y, n.z, n.h] for n in s.nodes], dtype=float)
        m = s.material
        rows, src, dst = [], [], []
        for e in s.elements:
            rows.append([m.young_modulus_E0, m.yield_strength, m.hardening_ratio,
                         e.length, e.floor, *_ONEHOT[e.kind], e.gravity_load])
            src.append(pos[e.node_a])
            dst.append(pos[e.node_b])
        attrs = np.array(rows, dtype=float).reshape(-1, N_EDGE_FEATURES)
        src, dst = np.array(src, dtype=int), np.array(dst, dtype=int)
        return cls(
            node_ext=node_ext,
            edge_attrs=np.vstack([attrs, attrs]),
            edge_index=np.vstack([np.r_[src, dst], np.r_[dst, src]]),
            num_stories=s.room_grid.count_z,
            node_ids=np.array([n.id for n in s.nodes]),
            room_grid=s.room_grid,
        )


@dataclass
class GraphSample:
    node_attrs: np.ndarray
    edge_attrs: np.ndarray
    edge_index: np.ndarray
    num_stories: int
    node_ids: np.ndarray
    room_grid: RoomGrid

    @property
    def num_nodes(self) -> int:
        return self.node_attrs.shape[0]

    def to_dict(self) -> dict:
        return {
            "node_attrs": self.node_attrs.tolist(),
            "edge_attrs": self.edge_attrs.tolist(),
            "edge_index": self.edge_index.tolist(),
            "num_stories": self.num_stories,
            "node_ids": self.node_ids.tolist(),
        }


def fire_node_features(node_ext: np.ndarray, fire_ext) -> np.ndarray:
    """13 node features from node extended coordinates and (x_f, y_f, z_f, h_f)."""
    f = np.broadcast_to(np.asarray(fire_ext, dtype=float), node_ext.shape)
    diff = node_ext - f
    ls = np.sqrt((diff[:, :3] ** 2).sum(axis=1, keepdims=True))
    return np.hstack([node_ext, f, diff, ls])


def encode(structure: Structure, fire: FirePoint, static: StaticGraph | None = None) -> GraphSample:
    static = static or StaticGraph.from_structure(structure)
    fire_ext = (fire.x_f, fire.y_f, fire.z_f, float(fire.h_f))
    return GraphSample(
        node_attrs=fire_node_features(static.node_ext, fire_ext),
        edge_attrs=static.edge_attrs,
        edge_index=static.edge_index,
        num_stories=static.num_stories,
        node_ids=static.node_ids,
        room_grid=static.room_grid,
    )


@dataclass
class MinMax:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "MinMax":
        return cls(rows.min(axis=0), rows.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def inv_span(self) -> np.ndarray:
        span = self.span
        out = np.zeros_like(span)
        nz = span > 0
        out[nz] = 1.0 / span[nz]
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) * self.inv_span

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.span + self.lo

    def to_dict(self) -> dict:
        return {"lo": np.atleast_1d(self.lo).tolist(), "hi": np.atleast_1d(self.hi).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMax":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass
class NormStats:
    node: MinMax
    edge: MinMax

    @classmethod
    def fit(cls, samples) -> "NormStats":
        samples = list(samples)
        return cls(MinMax.fit(np.vstack([s.node_attrs for s in samples])),
                   MinMax.fit(np.vstack([s.edge_attrs for s in samples])))

    def to_dict(self) -> dict:
        return {"node": self.node.to_dict(), "edge": self.edge.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(MinMax.from_dict(d["node"]), MinMax.from_dict(d["edge"]))


def normalize(sample: GraphSample, stats: NormStats) -> GraphSample:
    """Min-max scale both attribute matrices with training-split statistics."""
    return GraphSample(
        node_attrs=stats.node.apply(sample.node_attrs),
        edge_attrs=stats.edge.apply(sample.edge_attrs),
        edge_index=sample.edge_index,
        num_stories=sample.num_stories,
        node_ids=sample.node_ids,
        room_grid=sample.room_grid,
    )


def denormalize(sample: GraphSample, stats: NormStats) -> GraphSample:
    return GraphSample(
        node_attrs=stats.node.invert(sample.node_attrs),
        edge_attrs=stats.edge.invert(sample.edge_attrs),
        edge_index=sample.edge_index,
        num_stories=sample.num_stories,
        node_ids=sample.node_ids,
        room_grid=sample.room_grid,
    )


class GraphBatch:
    """Disjoint union of several samples, with index helpers precomputed."""

    def __init__(self, samples):
        samples = list(samples)
        if not samples:
            raise ValueError("empty batch")
        n_nodes = np.array([s.num_nodes for s in samples])
        n_edges = np.array([s.edge_index.shape[1] for s in samples])
        offsets = np.concatenate([[0], np.cumsum(n_nodes)[:-1]])
        self.num_graphs = len(samples)
        self.num_nodes = int(n_nodes.sum())
        self.node_x = np.vstack([s.node_attrs for s in samples])
        self.edge_x = np.vstack([s.edge_attrs for s in samples])
        ei = np.hstack([s.edge_index + o for s, o in zip(samples, offsets)])
        self.src, self.dst = ei[0], ei[1]
        self.graph_id = np.repeat(np.arange(len(samples)), n_nodes)
        self.edge_graph = np.repeat(np.arange(len(samples)), n_edges)
        self.stories = np.array([s.num_stories for s in samples])
        self.counts = n_nodes
        self.offsets = offsets
        self.src_seg = Segments(self.src, self.num_nodes)
        self.dst_seg = Segments(self.dst, self.num_nodes)
        self.graph_seg = Segments(self.graph_id, self.num_graphs)

    def node_mask(self, layer: int) -> np.ndarray:
        """Column mask of nodes whose graph runs ``layer`` (1-based)."""
        return (self.stories[self.graph_id] >= layer).astype(float)[:, None]

    def edge_mask(self, layer: int) -> np.ndarray:
        return (self.stories[self.edge_graph] >= layer).astype(float)[:, None]

    def split_nodes(self, values: np.ndarray) -> list[np.ndarray]:
        return np.split(values, np.cumsum(self.counts)[:-1])
