"""Fixture builders shared by the model tests."""
import numpy as np

from firesense.fea import run_scenario
from firesense.gnn import labeled_sample
from firesense.graph import GraphSample, StaticGraph
from firesense.structgen import generate_structure, sample_fire_points


def permute_nodes(sample: GraphSample, perm: np.ndarray) -> GraphSample:
    """Relabel nodes so new row ``i`` is old row ``perm[i]``."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return GraphSample(sample.node_attrs[perm], sample.edge_attrs, inv[sample.edge_index],
                       sample.num_stories, sample.node_ids[perm], sample.room_grid)


def permute_edges(sample: GraphSample, perm: np.ndarray) -> GraphSample:
    return GraphSample(sample.node_attrs, sample.edge_attrs[perm], sample.edge_index[:, perm],
                       sample.num_stories, sample.node_ids, sample.room_grid)


def disjoint_copies(sample: GraphSample, k: int = 2) -> GraphSample:
    n = sample.num_nodes
    return GraphSample(np.vstack([sample.node_attrs] * k), np.vstack([sample.edge_attrs] * k),
                       np.hstack([sample.edge_index + i * n for i in range(k)]), sample.num_stories,
                       np.concatenate([sample.node_ids] * k), sample.room_grid)


def labeled_corpus(n_structures: int, fires: int, seed: int = 0):
    items = []
    for sid in range(n_structures):
        s = generate_structure(seed * 1000 + sid, structure_id=sid)
        static = StaticGraph.from_structure(s)
        for k, f in enumerate(sample_fire_points(s, fires, sid)):
            res = run_scenario(s, f, scenario_id=f"{sid:05d}-{k:03d}")
            items.append(labeled_sample(s, f, res, static))
    return items
