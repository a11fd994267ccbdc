"""Most-fire-sensitive-point (MFSP) predictor trained against a frozen agent.

Pseudo labels come from the agent's argmax over room centers. The predictor
reads the structure graph with a virtual fire point (VFP) in the fire-point
slots: random in the bounding box while training, the box center at
inference. Its sigmoid head yields box-relative coordinates.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import DataEmpty, FrozenAgentViolated, NonFiniteLoss
from .gnn import (GnnBackbone, GnnConfig, MidrModel, ModelBundle, TrainConfig, load_modules, pool,
                  split_by_structure)
from .graph import GraphBatch, GraphSample, NormStats, StaticGraph, encode
from .nn import Adam, Mlp
from .structgen import FirePoint, Structure, fire_point_at, room_centers

INIT_MODES = ("de_novo", "transfer")
LOSS_MODES = ("mse", "hybrid")
SPATIAL_FEATURES = 4  # x, y, z, h


class Agent(Protocol):
    def midr_for_fires(self, structure: Structure, fires, static: StaticGraph | None = None) -> np.ndarray: ...

    def midr_tensor(self, statics: list[StaticGraph], points: Tensor) -> Tensor: ...

    def parameter_hash(self) -> str: ...


class SyntheticAgent:
    """Analytic agent: MIDR is the negated distance to a planted point.

    The planted point sits at fixed box-relative coordinates ``frac`` of
    every structure, so the argmax room is a pure function of geometry.
    """

    def __init__(self, frac=(0.3, 0.7, 0.4)):
        self.frac = np.asarray(frac, dtype=float)
        if self.frac.shape != (3,) or np.any(self.frac < 0) or np.any(self.frac > 1):
            raise ValueError("frac must be three values in [0, 1]")

    def target(self, structure: Structure) -> np.ndarray:
        return self.frac * np.asarray(structure.bbox)

    def midr_for_fires(self, structure, fires, static=None) -> np.ndarray:
        pts = np.array([f.xyz for f in fires], dtype=float).reshape(-1, 3)
        return -np.sqrt(((pts - self.target(structure)) ** 2).sum(axis=1))

    def midr_tensor(self, statics, points: Tensor) -> Tensor:
        tgt = np.array([self.frac * np.asarray(s.room_grid.extent) for s in statics])
        return ad.neg(ad.sqrt(ad.sum(ad.square(ad.sub(points, tgt)), axis=1), eps=1e-12))

    def parameter_hash(self) -> str:
        return hashlib.sha256(self.frac.tobytes()).hexdigest()


class CentroidAgent(SyntheticAgent):
    """MIDR is the negated distance to the bounding-box center."""

    def __init__(self):
        super().__init__((0.5, 0.5, 0.5))


# ---------------------------------------------------------------------------
# pseudo labels

@dataclass
class PseudoLabel:
    structure_id: int
    pgt_point: tuple[float, float, float]
    room_index: int
    pgt_midr: float
    ranked_rooms: list[tuple[int, float]]  # (room, predicted MIDR), best first

    def to_dict(self) -> dict:
        return {
            "structure_id": self.structure_id,
            "pgt_point": list(self.pgt_point),
            "room_index": self.room_index,
            "pgt_midr": self.pgt_midr,
            "ranked_rooms": [[r, m] for r, m in self.ranked_rooms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoLabel":
        return cls(d["structure_id"], tuple(d["pgt_point"]), d["room_index"], d["pgt_midr"],
                   [(int(r), float(m)) for r, m in d["ranked_rooms"]])

    def rank_of(self, room: int) -> int:
        """1-based position of ``room`` in the ranking."""
        for pos, (r, _) in enumerate(self.ranked_rooms, start=1):
            if r == room:
                return pos
        raise KeyError(room)


def rank_rooms(midrs) -> list[int]:
    """Room indices by descending MIDR, ties to the lower index."""
    midrs = np.asarray(midrs, dtype=float)
    return sorted(range(len(midrs)), key=lambda r: (-midrs[r], r))


def pseudo_label(structure: Structure, agent: Agent, static: StaticGraph | None = None) -> PseudoLabel:
    centers = room_centers(structure)
    midrs = agent.midr_for_fires(structure, centers, static)
    order = rank_rooms(midrs)
    best = centers[order[0]]
    return PseudoLabel(structure.id, best.xyz, best.room_index, float(midrs[order[0]]),
                       [(int(r), float(midrs[r])) for r in order])


# ---------------------------------------------------------------------------
# model

class MfspModel:
    def __init__(self, config: GnnConfig = GnnConfig(), init: str = "de_novo", seed: int = 0):
        if init not in INIT_MODES:
            raise ValueError(f"unknown init mode {init!r}")
        if init == "de_novo":
            config = GnnConfig(**{**asdict(config), "node_in": SPATIAL_FEATURES})
        rng = np.random.default_rng(seed)
        self.config = config
        self.init = init
        self.seed = seed
        self.backbone = GnnBackbone(config, rng)
        d = 2 * config.node_dim
        self.head = Mlp([d, d, 3], ["relu", "sigmoid"], rng=rng)
        self.norm_stats: NormStats | None = None

    @classmethod
    def from_agent(cls, agent: MidrModel, seed: int = 0) -> "MfspModel":
        """Transfer mode: start from a copy of the agent's backbone and scaling."""
        model = cls(agent.config, "transfer", seed)
        model.backbone = copy.deepcopy(agent.backbone)
        model.norm_stats = copy.deepcopy(agent.norm_stats)
        return model

    def modules(self) -> dict[str, Mlp]:
        out = dict(self.backbone.modules())
        out["head"] = self.head
        return out

    def parameters(self):
        return [p for m in self.modules().values() for p in m.parameters()]

    def raw_sample(self, structure: Structure, vfp: FirePoint, static: StaticGraph | None = None) -> GraphSample:
        static = static or StaticGraph.from_structure(structure)
        if self.init == "transfer":
            return encode(structure, vfp, static)
        # de-novo input carries no fire information at all
        return GraphSample(static.node_ext.copy(), static.edge_attrs, static.edge_index,
                           static.num_stories, static.node_ids, static.room_grid)

    def sample(self, structure, vfp, static=None) -> GraphSample:
        s = self.raw_sample(structure, vfp, static)
        if self.norm_stats is None:
            return s
        return GraphSample(self.norm_stats.node.apply(s.node_attrs), self.norm_stats.edge.apply(s.edge_attrs),
                           s.edge_index, s.num_stories, s.node_ids, s.room_grid)

    def forward(self, batch: GraphBatch, extents: np.ndarray) -> Tensor:
        """Predicted points in meters, B x 3."""
        v, _ = self.backbone(batch)
        unit = self.head(pool(v, batch))
        return ad.mul(unit, extents)

    def to_bundle(self, **extra) -> ModelBundle:
        return ModelBundle(kind="mfsp", config=asdict(self.config), method=self.init, seed=self.seed,
                           params={k: m.state() for k, m in self.modules().items()},
                           norm_stats=self.norm_stats.to_dict() if self.norm_stats else None, **extra)

    @classmethod
    def from_bundle(cls, bundle: ModelBundle) -> "MfspModel":
        config = GnnConfig(**bundle.config)
        model = cls(config, bundle.method, bundle.seed)
        load_modules(model.modules(), bundle.params)
        model.norm_stats = NormStats.from_dict(bundle.norm_stats) if bundle.norm_stats else None
        return model


def center_vfp(structure: Structure) -> FirePoint:
    return fire_point_at(structure, *structure.center)


def random_vfp(structure: Structure, rng: np.random.Generator) -> FirePoint:
    return fire_point_at(structure, *rng.uniform(0.0, 1.0, 3) * np.asarray(structure.bbox))


def predict_points(model: MfspModel, structures, vfps=None, statics=None) -> np.ndarray:
    vfps = vfps or [center_vfp(s) for s in structures]
    statics = statics or [StaticGraph.from_structure(s) for s in structures]
    batch = GraphBatch([model.sample(s, f, g) for s, f, g in zip(structures, vfps, statics)])
    with no_grad():
        return model.forward(batch, np.array([s.bbox for s in structures])).data


def predict_mfsp(model: MfspModel, structure: Structure) -> tuple[float, float, float]:
    p = predict_points(model, [structure])[0]
    return (float(p[0]), float(p[1]), float(p[2]))


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class LossConfig:
    mode: str = "mse"
    w1: float = 50.0
    w2: float = 1.0

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be non-negative")


def mfsp_loss(model: MfspModel, structures, statics, labels, vfps, agent: Agent | None,
              loss_cfg: LossConfig) -> Tensor:
    """w2 * mean squared point error (m^2), plus w1 * L_MIDR in hybrid mode.

    L_MIDR is the negated mean MIDR (percent) the frozen agent assigns to the
    predicted points, so minimising the total pushes predictions towards
    more damaging fire locations.
    """
    batch = GraphBatch([model.sample(s, f, g) for s, f, g in zip(structures, vfps, statics)])
    pred = model.forward(batch, np.array([s.bbox for s in structures]))
    target = np.array([labels[s.id].pgt_point for s in structures])
    mse = ad.mean(ad.sum(ad.square(ad.sub(pred, target)), axis=1))
    loss = ad.mul(mse, loss_cfg.w2)
    if loss_cfg.mode == "hybrid":
        if agent is None:
            raise ValueError("hybrid loss needs an agent")
        l_midr = ad.neg(ad.mean(agent.midr_tensor(statics, pred)))
        loss = ad.add(ad.mul(l_midr, loss_cfg.w1), loss)
    return loss


def _agent_params(agent):
    return agent.parameters() if hasattr(agent, "parameters") else []


def fit_mfsp_stats(model: MfspModel, structures, statics, rng):
    samples = [model.raw_sample(s, random_vfp(s, rng), g) for s, g in zip(structures, statics)]
    model.norm_stats = NormStats.fit(samples)


def train_mfsp(model: MfspModel, structures: list[Structure], labels: dict, agent: Agent | None,
               loss_cfg: LossConfig = LossConfig(), config: TrainConfig = TrainConfig(),
               val: list[Structure] | None = None) -> ModelBundle:
    """Fit ``model`` to pseudo labels; a fresh VFP is drawn per structure per iteration."""
    if not structures:
        raise DataEmpty("no structures to train on")
    rng = np.random.default_rng(config.seed)
    if val is None:
        tr_ids, val_ids = split_by_structure([s.id for s in structures], config.val_fraction, config.seed + 1)
        val = [s for s in structures if s.id in val_ids]
        structures = [s for s in structures if s.id in tr_ids]
    statics = {s.id: StaticGraph.from_structure(s) for s in structures + val}
    if model.norm_stats is None:
        fit_mfsp_stats(model, structures, [statics[s.id] for s in structures], rng)
    frozen = _agent_params(agent) if agent is not None else []
    saved_flags = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad = False
    before = agent.parameter_hash() if agent is not None else None
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    ref = val or structures

    def val_loss():
        with no_grad():
            pts = predict_points(model, ref, statics=[statics[s.id] for s in ref])
        tgt = np.array([labels[s.id].pgt_point for s in ref])
        return float(np.mean(((pts - tgt) ** 2).sum(axis=1)))

    best = val_loss()
    best_snap, stale = [p.data.copy() for p in params], 0
    history = {"train": [], "val": [best]}
    try:
        for _ in range(config.epochs):
            perm = rng.permutation(len(structures))
            total = 0.0
            for i in range(0, len(perm), config.batch_size):
                bs = [structures[j] for j in perm[i:i + config.batch_size]]
                vfps = [random_vfp(s, rng) for s in bs]
                opt.zero_grad()
                loss = mfsp_loss(model, bs, [statics[s.id] for s in bs], labels, vfps, agent, loss_cfg)
                if not np.isfinite(loss.item()):
                    raise NonFiniteLoss("MFSP loss is not finite")
                loss.backward()
                opt.step()
                total += loss.item() * len(bs)
            history["train"].append(total / len(structures))
            score = val_loss()
            history["val"].append(score)
            if score < best:
                best, best_snap, stale = score, [p.data.copy() for p in params], 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    finally:
        for p, flag in zip(frozen, saved_flags):
            p.requires_grad = flag
    for p, snap in zip(params, best_snap):
        p.data = snap
    if agent is not None and agent.parameter_hash() != before:
        raise FrozenAgentViolated("agent parameters changed during MFSP training")
    return model.to_bundle(history=history, extra={"loss": asdict(loss_cfg), "train_config": asdict(config),
                                                   "agent_hash": before})


def vfp_spread(model: MfspModel, structures, n_draws: int = 8, seed: int = 0) -> np.ndarray:
    """Per structure RMS distance (m) of predictions from their mean under random VFPs."""
    rng = np.random.default_rng(seed)
    statics = [StaticGraph.from_structure(s) for s in structures]
    draws = np.stack([predict_points(model, structures, [random_vfp(s, rng) for s in structures], statics)
                      for _ in range(n_draws)])  # draws x B x 3
    dev = draws - draws.mean(axis=0, keepdims=True)
    return np.sqrt((dev ** 2).sum(axis=2).mean(axis=0))


def room_diagonal(structure: Structure) -> float:
    return float(np.linalg.norm(structure.room_grid.room_dims))


def save_labels(labels: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({str(k): v.to_dict() for k, v in sorted(labels.items())}, fh, sort_keys=True)
