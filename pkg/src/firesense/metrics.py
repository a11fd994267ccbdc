"""Evaluation metrics and report emitters for the MIDR and MFSP predictors."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInput, KeyMismatch, OutOfBox
from .structgen import Structure

SEVERE_MIDR = 2.0  # percent
CCDF_GRID = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.01), 2)
MFSP_THRESHOLDS = {"e": (5.0, 10.0), "e_room": (math.sqrt(2.0), 2.0), "rank": (5, 10)}


def spearman(a, b) -> float:
    """Pearson correlation of average ranks."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DegenerateInput("inputs must be two 1-D sequences of equal length")
    if a.size < 2:
        raise DegenerateInput("need at least two values")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        raise DegenerateInput("constant input; rank correlation undefined")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def ccdf(values, grid=CCDF_GRID) -> list[tuple[float, float]]:
    """Fraction of ``values`` strictly above each grid point."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return [(float(t), 0.0) for t in grid]
    above = v.size - np.searchsorted(v, grid, side="right")
    return [(float(t), float(c) / v.size) for t, c in zip(grid, above)]


def cdf_at(values, thresholds) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    return {f"{t:g}": float(np.mean(v <= t + 1e-12)) if v.size else 0.0 for t in thresholds}


@dataclass
class MidrEvalReport:
    n_pairs: int
    mse: float
    mae: float
    spearman_mean: float | None
    spearman_severe_mean: float | None
    per_structure: dict[int, float | None]
    severe: list[int]
    ccdf: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_structure"] = {str(k): v for k, v in sorted(self.per_structure.items())}
        return d


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def midr_eval(predictions: dict, ground_truths: dict) -> MidrEvalReport:
    """Compare MIDR predictions with ground truth.

    Both maps are keyed by ``(structure_id, scenario_id)``; rank correlation
    is taken per structure over its scenarios.
    """
    if set(predictions) != set(ground_truths):
        missing = set(ground_truths) ^ set(predictions)
        raise KeyMismatch(f"{len(missing)} keys differ between predictions and ground truth")
    if not predictions:
        raise KeyMismatch("no scenarios to evaluate")
    keys = sorted(predictions)
    p = np.array([predictions[k] for k in keys], dtype=float)
    y = np.array([ground_truths[k] for k in keys], dtype=float)
    groups = defaultdict(list)
    for i, k in enumerate(keys):
        groups[int(k[0])].append(i)
    per, severe = {}, []
    for sid, idx in sorted(groups.items()):
        try:
            per[sid] = spearman(p[idx], y[idx])
        except DegenerateInput:
            per[sid] = None
        if np.any(y[idx] > SEVERE_MIDR):
            severe.append(sid)
    defined = [v for v in per.values() if v is not None]
    return MidrEvalReport(
        n_pairs=len(keys),
        mse=float(np.mean((p - y) ** 2)),
        mae=float(np.mean(np.abs(p - y))),
        spearman_mean=_mean_defined(per.values()),
        spearman_severe_mean=_mean_defined(per[s] for s in severe),
        per_structure=per,
        severe=severe,
        ccdf=ccdf(defined),
    )


@dataclass
class MfspEvalReport:
    n_structures: int
    e: float
    e_room: float
    rank: float
    midr_at_prediction: float | None
    per_structure: dict[int, dict]
    cdf: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_structure"] = {str(k): v for k, v in sorted(self.per_structure.items())}
        return d


def _room_center(structure: Structure, room: int) -> np.ndarray:
    lo, hi = structure.room_grid.room_bounds(room)
    return 0.5 * (lo + hi)


def room_distance(structure: Structure, room_a: int, room_b: int) -> float:
    """Distance between two room centers in units of room dimensions."""
    d = (_room_center(structure, room_a) - _room_center(structure, room_b)) / np.array(structure.room_grid.room_dims)
    return float(np.sqrt((d ** 2).sum()))


def mfsp_eval(predictions: dict, pseudo_labels: dict, structures: dict, tol: float = 1e-9) -> MfspEvalReport:
    """Score predicted MFSPs (structure id -> (x, y, z)) against pseudo labels."""
    if set(predictions) != set(pseudo_labels) or not set(predictions) <= set(structures):
        raise KeyMismatch("predictions, pseudo labels and structures are not aligned")
    per = {}
    for sid in sorted(predictions):
        s, lab = structures[sid], pseudo_labels[sid]
        pt = np.asarray(predictions[sid], dtype=float)
        ext = np.asarray(s.bbox)
        if np.any(pt < -tol) or np.any(pt > ext + tol):
            raise OutOfBox(f"prediction {pt.tolist()} outside the box of structure {sid}")
        room = s.room_grid.containing_room(*pt)
        midr_by_room = dict(lab.ranked_rooms)
        per[sid] = {
            "room": int(room),
            "e": float(np.linalg.norm(pt - np.asarray(lab.pgt_point))),
            "e_room": room_distance(s, room, lab.room_index),
            "rank": lab.rank_of(room),
            "midr": midr_by_room.get(room),
        }
    rows = list(per.values())
    midrs = [r["midr"] for r in rows if r["midr"] is not None]
    return MfspEvalReport(
        n_structures=len(rows),
        e=float(np.mean([r["e"] for r in rows])) if rows else float("nan"),
        e_room=float(np.mean([r["e_room"] for r in rows])) if rows else float("nan"),
        rank=float(np.mean([r["rank"] for r in rows])) if rows else float("nan"),
        midr_at_prediction=float(np.mean(midrs)) if midrs else None,
        per_structure=per,
        cdf={k: cdf_at([r[k] for r in rows], t) for k, t in MFSP_THRESHOLDS.items()},
    )


def write_json(report, path) -> None:
    data = report.to_dict() if hasattr(report, "to_dict") else report
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2))


def write_table(rows, path, header=("x", "y")) -> None:
    """Two-column CSV of (threshold, fraction) pairs."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in rows:
            w.writerow([f"{a:g}", f"{b:.6f}"])
