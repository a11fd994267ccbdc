"""GNN surrogate of the frame oracle's MIDR (the differentiable agent).

Layer ``k`` runs only on graphs with at least ``k`` stories. Messages are
``phi_k(concat(v_src, e))``, aggregated with an element-wise max over
incoming edges, and nodes update residually, ``v += gamma_k(agg)``. With
edge update on, a single shared MLP refines every directed edge,
``e += zeta(concat(v_dst, v_src))``.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import DataEmpty, LayerOverflow, NonFiniteLoss, ShapeMismatch
from .graph import (N_EDGE_FEATURES, N_NODE_FEATURES, GraphBatch, GraphSample, MinMax,
                    NormStats, StaticGraph, encode, normalize)
from .nn import ACTIVATIONS, Adam, Mlp, parameter_hash
from .structgen import FirePoint, Structure

log = logging.getLogger(__name__)

METHODS = ("proposed", "strawman1", "strawman2")


@dataclass(frozen=True)
class GnnConfig:
    node_dim: int = 32
    edge_dim: int = 32
    msg_hidden: int = 64
    upd_hidden: int = 64
    eu_hidden: int = 32
    max_layers: int = 7
    edge_update_enabled: bool = True
    node_in: int = N_NODE_FEATURES
    edge_in: int = N_EDGE_FEATURES

    @classmethod
    def small(cls, edge_update: bool = True) -> "GnnConfig":
        return cls(edge_update_enabled=edge_update)

    @classmethod
    def large(cls, edge_update: bool = True) -> "GnnConfig":
        return cls(64, 64, 128, 128, 64, edge_update_enabled=edge_update)

    @classmethod
    def of_size(cls, size: str, edge_update: bool = True) -> "GnnConfig":
        return {"small": cls.small, "large": cls.large}[size](edge_update)


class GnnBackbone:
    """Encoders plus the stack of message-passing layers."""

    def __init__(self, config: GnnConfig, rng: np.random.Generator):
        c = config
        self.config = c
        self.node_encoder = Mlp([c.node_in, c.node_dim, c.node_dim], rng=rng)
        self.edge_encoder = Mlp([c.edge_in, c.edge_dim, c.edge_dim], rng=rng)
        self.phi = [Mlp([c.node_dim + c.edge_dim, c.msg_hidden, c.node_dim], rng=rng)
                    for _ in range(c.max_layers)]
        self.gamma = [Mlp([c.node_dim, c.upd_hidden, c.node_dim], rng=rng)
                      for _ in range(c.max_layers)]
        self.zeta = Mlp([2 * c.node_dim, c.eu_hidden, c.edge_dim], rng=rng) if c.edge_update_enabled else None

    def modules(self) -> dict[str, Mlp]:
        out = {"node_encoder": self.node_encoder, "edge_encoder": self.edge_encoder}
        for k, (p, g) in enumerate(zip(self.phi, self.gamma), start=1):
            out[f"phi{k}"] = p
            out[f"gamma{k}"] = g
        if self.zeta is not None:
            out["zeta"] = self.zeta
        return out

    def parameters(self):
        return [p for m in self.modules().values() for p in m.parameters()]

    def layer_parameters(self, k: int):
        return self.phi[k - 1].parameters() + self.gamma[k - 1].parameters()

    def __call__(self, batch: GraphBatch, node_x: Tensor | None = None, trace: list | None = None):
        return gnn_forward(self, batch, node_x, trace)


def gnn_forward(backbone: GnnBackbone, batch: GraphBatch, node_x: Tensor | None = None,
                trace: list | None = None):
    """Node and edge embeddings after ``num_stories`` layers per graph.

    ``trace``, when given, collects the edge embedding after every layer.
    """
    c = backbone.config
    depth = int(batch.stories.max())
    if depth > c.max_layers:
        raise LayerOverflow(f"{depth} stories exceed {c.max_layers} GNN layers")
    v = backbone.node_encoder(node_x if node_x is not None else Tensor(batch.node_x))
    e = backbone.edge_encoder(Tensor(batch.edge_x))
    if trace is not None:
        trace.append(e)
    for k in range(1, depth + 1):
        partial = bool(np.any(batch.stories < k))
        phi = backbone.phi[k - 1]
        msg = edge_mlp(phi, [(v, batch.src_seg), (e, None)])
        agg = ad.segment_max(msg, batch.dst_seg)
        upd = backbone.gamma[k - 1](agg)
        if partial:
            upd = ad.mul(upd, batch.node_mask(k))
        v = ad.add(v, upd)
        if backbone.zeta is not None:
            z = edge_mlp(backbone.zeta, [(v, batch.dst_seg), (v, batch.src_seg)])
            if partial:
                z = ad.mul(z, batch.edge_mask(k))
            e = ad.add(e, z)
        if trace is not None:
            trace.append(e)
    return v, e


def edge_mlp(mlp: Mlp, parts) -> Tensor:
    """``mlp(concat(part rows))`` for edge-level inputs.

    Each part is ``(tensor, seg)``: node-level tensors carry the gather
    index of their endpoint, edge-level ones ``None``. The first affine
    layer is split by input block so node blocks are transformed once per
    node and gathered afterwards, which is the same map as the concat form
    at a fraction of the cost.
    """
    w, b = mlp.weights[0], mlp.biases[0]
    off, acc, last = 0, None, None
    for x, seg in parts:
        width = x.shape[1]
        if seg is None:
            last = (x, ad.rows(w, off, off + width))
        else:
            y = ad.gather_rows(ad.matmul(x, ad.rows(w, off, off + width)), seg)
            acc = y if acc is None else ad.add(acc, y)
        off += width
    if off != mlp.dims[0]:
        raise ShapeMismatch(f"edge MLP expects {mlp.dims[0]} input columns, got {off}")
    if last is not None:
        x = ad.linear(last[0], last[1], b, mlp.activations[0], pre=acc)
    else:
        x = ACTIVATIONS[mlp.activations[0]](ad.add(acc, b))
    for w, b, act in zip(mlp.weights[1:], mlp.biases[1:], mlp.activations[1:]):
        x = ad.linear(x, w, b, act)
    return x


def pool(v: Tensor, batch: GraphBatch) -> Tensor:
    """Graph embedding: concat(mean over nodes, max over nodes)."""
    return ad.concat([ad.segment_mean(v, batch.graph_seg), ad.segment_max(v, batch.graph_seg)])


def identity_stats() -> MinMax:
    return MinMax(np.zeros(1), np.ones(1))


class MidrModel:
    def __init__(self, config: GnnConfig = GnnConfig(), seed: int = 0, method: str = "proposed"):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        rng = np.random.default_rng(seed)
        self.config = config
        self.seed = seed
        self.method = method
        self.backbone = GnnBackbone(config, rng)
        self.head1 = Mlp([config.node_dim, 1], ["identity"], rng=rng)
        self.head2 = Mlp([2 * config.node_dim, 1], ["identity"], rng=rng)
        self.norm_stats: NormStats | None = None
        self.idr_stats = identity_stats()
        self.midr_stats = identity_stats()

    # parameters -------------------------------------------------------------
    def modules(self) -> dict[str, Mlp]:
        out = dict(self.backbone.modules())
        out["head1"] = self.head1
        out["head2"] = self.head2
        return out

    def parameters(self):
        return [p for m in self.modules().values() for p in m.parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def parameter_hash(self) -> str:
        return parameter_hash(self.parameters())

    def set_requires_grad(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag

    # encoding ---------------------------------------------------------------
    def prepare(self, sample: GraphSample) -> GraphSample:
        return normalize(sample, self.norm_stats) if self.norm_stats is not None else sample

    def batch(self, structure: Structure, fires, static: StaticGraph | None = None) -> GraphBatch:
        static = static or StaticGraph.from_structure(structure)
        return GraphBatch([self.prepare(encode(structure, f, static)) for f in fires])

    # heads -------------------------------------------------------------------
    def node_outputs(self, batch: GraphBatch, node_x: Tensor | None = None) -> Tensor:
        v, _ = self.backbone(batch, node_x)
        return self.head1(v)

    def graph_outputs(self, batch: GraphBatch, node_x: Tensor | None = None) -> Tensor:
        """Normalised MIDR per graph (B x 1) for the active method."""
        v, _ = self.backbone(batch, node_x)
        if self.method == "strawman2":
            node = self.head1(v)
            # strawman 2 reads MIDR as the largest node IDR
            return ad.segment_max(node, batch.graph_seg)
        return self.head2(pool(v, batch))

    def _denorm_graph(self, y: np.ndarray) -> np.ndarray:
        stats = self.idr_stats if self.method == "strawman2" else self.midr_stats
        return stats.invert(y)

    def predict_batch(self, batch: GraphBatch) -> np.ndarray:
        with no_grad():
            return self._denorm_graph(self.graph_outputs(batch).data[:, 0])

    def midr_for_fires(self, structure: Structure, fires, static: StaticGraph | None = None,
                       chunk: int = 32) -> np.ndarray:
        static = static or StaticGraph.from_structure(structure)
        out = []
        for i in range(0, len(fires), chunk):
            out.append(self.predict_batch(self.batch(structure, fires[i:i + chunk], static)))
        return np.concatenate(out) if out else np.zeros(0)

    def midr_tensor(self, statics: list[StaticGraph], points: Tensor) -> Tensor:
        """Differentiable MIDR (percent) for fire points ``points`` (B x 3, meters).

        The fire floor enters as the continuous value ``z / H + 0.5``, which
        equals the integer story at every room mid-height.
        """
        batch = GraphBatch([_fireless_sample(s) for s in statics])
        node_x = differentiable_node_features(batch, statics, points, self.norm_stats)
        y = self.graph_outputs(batch, node_x)
        stats = self.idr_stats if self.method == "strawman2" else self.midr_stats
        return ad.add(ad.mul(y, float(stats.span[0])), float(stats.lo[0]))

    # bundle -------------------------------------------------------------------
    def to_bundle(self, **extra) -> "ModelBundle":
        return ModelBundle(
            kind="midr",
            config=asdict(self.config),
            method=self.method,
            seed=self.seed,
            params={k: m.state() for k, m in self.modules().items()},
            norm_stats=self.norm_stats.to_dict() if self.norm_stats else None,
            target_stats={"idr": self.idr_stats.to_dict(), "midr": self.midr_stats.to_dict()},
            **extra,
        )

    @classmethod
    def from_bundle(cls, bundle: "ModelBundle") -> "MidrModel":
        model = cls(GnnConfig(**bundle.config), bundle.seed, bundle.method)
        load_modules(model.modules(), bundle.params)
        model.norm_stats = NormStats.from_dict(bundle.norm_stats) if bundle.norm_stats else None
        model.idr_stats = MinMax.from_dict(bundle.target_stats["idr"])
        model.midr_stats = MinMax.from_dict(bundle.target_stats["midr"])
        return model


def _fireless_sample(static: StaticGraph) -> GraphSample:
    n = static.node_ext.shape[0]
    return GraphSample(np.zeros((n, N_NODE_FEATURES)), static.edge_attrs, static.edge_index,
                       static.num_stories, static.node_ids, static.room_grid)


def differentiable_node_features(batch: GraphBatch, statics: list[StaticGraph], points: Tensor,
                                 stats: NormStats | None) -> Tensor:
    """Normalised 13-feature node matrix as a differentiable function of fire points."""
    if stats is not None:
        batch.edge_x = stats.edge.apply(batch.edge_x)
    ext = np.vstack([s.node_ext for s in statics])
    inv_h = np.array([[1.0 / s.room_grid.story_height] for s in statics])
    h_f = ad.add(ad.mul(ad.columns(points, [2]), inv_h), 0.5)
    fire = ad.concat([points, h_f])
    fire_n = ad.gather_rows(fire, batch.graph_seg)
    diff = ad.sub(ext, fire_n)
    dist = ad.sqrt(ad.sum(ad.square(ad.columns(diff, [0, 1, 2])), axis=1), eps=1e-12)
    raw = ad.concat([Tensor(ext), fire_n, diff, dist])
    if stats is None:
        return raw
    return ad.mul(ad.sub(raw, stats.node.lo[None, :]), stats.node.inv_span[None, :])


def load_modules(modules: dict[str, Mlp], params: dict):
    for name, mlp in modules.items():
        src = Mlp.from_state(params[name])
        for dst_p, src_p in zip(mlp.parameters(), src.parameters()):
            if dst_p.data.shape != src_p.data.shape:
                raise ValueError(f"shape mismatch loading {name}")
            dst_p.data = src_p.data.copy()


def predict_node_idr(model: MidrModel, sample: GraphSample) -> np.ndarray:
    """Per-node IDR (percent) from task head-1; ``sample`` is raw (un-normalised)."""
    batch = GraphBatch([model.prepare(sample)])
    with no_grad():
        return model.idr_stats.invert(model.node_outputs(batch).data[:, 0])


def predict_midr(model: MidrModel, sample: GraphSample) -> float:
    batch = GraphBatch([model.prepare(sample)])
    return float(model.predict_batch(batch)[0])


# ---------------------------------------------------------------------------
# bundle

@dataclass
class ModelBundle:
    kind: str
    config: dict
    method: str
    seed: int
    params: dict
    norm_stats: dict | None
    target_stats: dict | None = None
    history: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelBundle":
        return cls(**json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# training

@dataclass
class LabeledSample:
    structure_id: int
    scenario_id: str
    sample: GraphSample  # raw attributes
    node_idr: np.ndarray  # per node, NaN where no counterpart below
    midr: float


def labeled_sample(structure: Structure, fire: FirePoint, result, static=None) -> LabeledSample:
    sample = encode(structure, fire, static)
    idr = np.array([result.node_idr.get(int(n), np.nan) for n in sample.node_ids])
    return LabeledSample(structure.id, result.scenario_id, sample, idr, float(result.midr))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200  # per step
    head_epochs: int | None = None  # head-only stage of step 2; defaults to ``epochs``
    finetune_epochs: int | None = None
    batch_size: int = 32
    lr: float = 1e-3
    finetune_lr_scale: float = 0.1
    head_lr: float | None = None
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0


def split_by_structure(ids, test_fraction: float, seed: int) -> tuple[set, set]:
    """Deterministic structure-level split; returns (train_ids, test_ids)."""
    uniq = np.array(sorted(set(ids)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(uniq))
    n_test = int(round(test_fraction * len(uniq)))
    if len(uniq) > 1:
        n_test = min(max(n_test, 1), len(uniq) - 1) if test_fraction > 0 else 0
    test = set(uniq[perm[:n_test]].tolist())
    return set(uniq.tolist()) - test, test


class _Prepared:
    """Normalised samples and targets for one training split."""

    def __init__(self, model: MidrModel, items: list[LabeledSample]):
        self.items = items
        self.samples = [model.prepare(it.sample) for it in items]
        self.idr = [model.idr_stats.apply(it.node_idr) for it in items]
        self.midr = np.array([model.midr_stats.apply(np.array([it.midr]))[0] for it in items])

    def __len__(self):
        return len(self.items)

    def batches(self, batch_size: int, rng: np.random.Generator | None):
        idx = np.arange(len(self.items)) if rng is None else rng.permutation(len(self.items))
        for i in range(0, len(idx), batch_size):
            sel = idx[i:i + batch_size]
            yield sel, GraphBatch([self.samples[j] for j in sel])


def _node_loss(model: MidrModel, batch: GraphBatch, targets: np.ndarray) -> Tensor:
    pred = model.node_outputs(batch)
    mask = np.isfinite(targets)
    tgt = np.where(mask, targets, 0.0)[:, None]
    err = ad.mul(ad.sub(pred, tgt), mask[:, None].astype(float))
    return ad.mul(ad.sum(ad.square(err)), 1.0 / max(int(mask.sum()), 1))


def _graph_loss(model: MidrModel, batch: GraphBatch, targets: np.ndarray) -> Tensor:
    pred = model.graph_outputs(batch)
    return ad.mean(ad.square(ad.sub(pred, targets[:, None])))


def _loss(model, data: _Prepared, sel, batch, task: str) -> Tensor:
    if task == "node":
        return _node_loss(model, batch, np.concatenate([data.idr[j] for j in sel]))
    return _graph_loss(model, batch, data.midr[sel])


def _evaluate(model, data: _Prepared, task: str, batch_size: int) -> float:
    if len(data) == 0:
        return float("nan")
    total, weight = 0.0, 0
    with no_grad():
        for sel, batch in data.batches(batch_size, None):
            if task == "node":
                tg = np.concatenate([data.idr[j] for j in sel])
                w = int(np.isfinite(tg).sum())
            else:
                w = len(sel)
            total += _loss(model, data, sel, batch, task).item() * w
            weight += w
    return total / max(weight, 1)


def _snapshot(params) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data = s.copy()


def _fit(model: MidrModel, params, train: _Prepared, val: _Prepared, task: str, epochs: int,
         lr: float, cfg: TrainConfig, rng: np.random.Generator, label: str, history: dict):
    """Adam over ``params`` with early stopping; restores the best-validation weights."""
    if epochs <= 0:
        return
    opt = Adam(params, lr=lr)
    tracked = set(id(p) for p in params)
    for p in model.parameters():
        p.requires_grad = id(p) in tracked
    track_val = len(val) > 0
    best = _evaluate(model, val if track_val else train, task, cfg.batch_size)
    best_snap, stale = _snapshot(params), 0
    hist = history.setdefault(label, {"train": [], "val": [best]})
    for epoch in range(epochs):
        epoch_loss, n = 0.0, 0
        for sel, batch in train.batches(cfg.batch_size, rng):
            opt.zero_grad()
            loss = _loss(model, train, sel, batch, task)
            if not np.isfinite(loss.item()):
                raise NonFiniteLoss(f"{label}: loss is not finite")
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(sel)
            n += len(sel)
        score = _evaluate(model, val if track_val else train, task, cfg.batch_size)
        hist["train"].append(epoch_loss / max(n, 1))
        hist["val"].append(score)
        if score < best:
            best, best_snap, stale = score, _snapshot(params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _restore(params, best_snap)
    for p in model.parameters():
        p.requires_grad = True


def _fit_head2(model: MidrModel, train: _Prepared, val: _Prepared, epochs: int, lr: float,
               cfg: TrainConfig, rng, history: dict):
    """Train task head-2 on frozen graph embeddings (computed once)."""
    if epochs <= 0:
        return

    def embeddings(data: _Prepared):
        rows = []
        with no_grad():
            for _, batch in data.batches(cfg.batch_size, None):
                v, _ = model.backbone(batch)
                rows.append(pool(v, batch).data)
        return np.vstack(rows) if rows else np.zeros((0, 2 * model.config.node_dim))

    g_train, g_val = embeddings(train), embeddings(val)
    params = model.head2.parameters()
    opt = Adam(params, lr=lr)

    def score(g, y):
        with no_grad():
            return float(np.mean((model.head2(Tensor(g)).data[:, 0] - y) ** 2))

    ref_g, ref_y = (g_val, val.midr) if len(val) else (g_train, train.midr)
    best, best_snap, stale = score(ref_g, ref_y), _snapshot(params), 0
    hist = history.setdefault("head2", {"train": [], "val": [best]})
    for _ in range(epochs):
        perm = rng.permutation(len(train))
        for i in range(0, len(perm), cfg.batch_size):
            sel = perm[i:i + cfg.batch_size]
            opt.zero_grad()
            pred = model.head2(Tensor(g_train[sel]))
            loss = ad.mean(ad.square(ad.sub(pred, train.midr[sel][:, None])))
            loss.backward()
            opt.step()
        hist["train"].append(score(g_train, train.midr))
        s = score(ref_g, ref_y)
        hist["val"].append(s)
        if s < best:
            best, best_snap, stale = s, _snapshot(params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _restore(params, best_snap)


def fit_target_stats(model: MidrModel, items: list[LabeledSample]):
    model.norm_stats = NormStats.fit([it.sample for it in items])
    idr = np.concatenate([it.node_idr[np.isfinite(it.node_idr)] for it in items])
    model.idr_stats = MinMax.fit(idr[:, None]) if idr.size else identity_stats()
    model.midr_stats = MinMax.fit(np.array([[it.midr] for it in items]))


def train_two_step(model: MidrModel, labeled: list[LabeledSample], config: TrainConfig = TrainConfig(),
                   val: list[LabeledSample] | None = None) -> ModelBundle:
    """Train ``model`` in place according to ``model.method``.

    ``proposed``: node-IDR pre-training (head-1), then head-2 alone on frozen
    embeddings, then fine-tuning of everything on the MIDR loss.
    ``strawman1``: MIDR loss from scratch through the pooled head-2.
    ``strawman2``: node-IDR loss only; MIDR read as the node maximum.
    """
    if not labeled:
        raise DataEmpty("no labeled samples")
    rng = np.random.default_rng(config.seed)
    if val is None:
        tr_ids, val_ids = split_by_structure([it.structure_id for it in labeled], config.val_fraction,
                                             config.seed + 1)
        val = [it for it in labeled if it.structure_id in val_ids]
        labeled = [it for it in labeled if it.structure_id in tr_ids]
    fit_target_stats(model, labeled)
    train_d, val_d = _Prepared(model, labeled), _Prepared(model, val)
    history: dict = {}
    gnn_params = model.backbone.parameters()
    head_epochs = config.head_epochs if config.head_epochs is not None else config.epochs
    ft_epochs = config.finetune_epochs if config.finetune_epochs is not None else config.epochs
    if model.method == "strawman1":
        _fit(model, gnn_params + model.head2.parameters(), train_d, val_d, "graph",
             config.epochs, config.lr, config, rng, "strawman1", history)
    elif model.method == "strawman2":
        _fit(model, gnn_params + model.head1.parameters(), train_d, val_d, "node",
             config.epochs, config.lr, config, rng, "step1", history)
    else:
        _fit(model, gnn_params + model.head1.parameters(), train_d, val_d, "node",
             config.epochs, config.lr, config, rng, "step1", history)
        _fit_head2(model, train_d, val_d, head_epochs, config.head_lr or config.lr, config, rng, history)
        _fit(model, gnn_params + model.head2.parameters(), train_d, val_d, "graph",
             ft_epochs, config.lr * config.finetune_lr_scale, config, rng, "finetune", history)
    return model.to_bundle(history=history, extra={"train_config": asdict(config)})


def copy_backbone(model: MidrModel) -> GnnBackbone:
    return copy.deepcopy(model.backbone)
