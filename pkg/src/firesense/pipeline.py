"""Dataset layout, generation, simulation and loading used by the CLI.

Layout under a dataset directory::

    manifest.json            dataset manifest (pools, gravity MIDRs, files)
    structures/00012.json     one structure each
    scenarios/00012-003.json  fire point and oracle result
    pseudo_labels/00012.json  agent argmax per unlabeled structure
    models/*.bundle           trained model bundles
    reports/*.json|csv        evaluation outputs
    runs/<command>.json       run manifest of the latest invocation
"""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FiresenseError, SingularSystem
from .fea import FrameModel, SimResult, gravity_analysis, run_scenario
from .gnn import LabeledSample, labeled_sample
from .graph import StaticGraph
from .mfsp import PseudoLabel
from .structgen import FirePoint, Structure, generate_structure, gravity_filter, sample_fire_points

log = logging.getLogger(__name__)

TIMESTAMP_KEYS = ("started", "finished", "timings", "host")


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, dtype=np.uint64)[0])


def default_jobs() -> int:
    return max(1, int(os.environ.get("FIRESENSE_JOBS", "1")))


def _map(fn, items, jobs: int):
    """Ordered map; the result never depends on ``jobs``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, sort_keys=True))
    tmp.replace(path)


def read_json(path: Path):
    return json.loads(Path(path).read_text())


class RunManifest:
    """Record of one command invocation, written before any output."""

    def __init__(self, root: Path, command: str, config: dict, seed: int | None):
        self.path = Path(root) / "runs" / f"{command}.json"
        self.data = {
            "command": command,
            "config": config,
            "seed": seed,
            "version": __version__,
            "inputs": [],
            "outputs": [],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "host": platform.node(),
            "timings": {},
        }
        self._t0 = time.perf_counter()
        write_json(self.path, self.data)

    def add_output(self, path):
        self.data["outputs"].append(str(path))

    def add_input(self, path):
        self.data["inputs"].append(str(path))

    def time(self, name: str, seconds: float):
        self.data["timings"][name] = round(seconds, 3)

    def finish(self, **extra):
        self.data.update(extra)
        self.data["timings"]["total"] = round(time.perf_counter() - self._t0, 3)
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        self.data["outputs"] = sorted(set(self.data["outputs"]))
        write_json(self.path, self.data)


def strip_timestamps(data):
    if isinstance(data, dict):
        return {k: strip_timestamps(v) for k, v in data.items() if k not in TIMESTAMP_KEYS}
    if isinstance(data, list):
        return [strip_timestamps(v) for v in data]
    return data


class Dataset:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def require(self) -> "Dataset":
        if not self.manifest_path.is_file():
            raise FiresenseError(f"no dataset at {self.root} (missing manifest.json)")
        return self

    def manifest(self) -> dict:
        return read_json(self.require().manifest_path)

    def structure_path(self, sid: int) -> Path:
        return self.root / "structures" / f"{sid:05d}.json"

    def scenario_path(self, scenario_id: str) -> Path:
        return self.root / "scenarios" / f"{scenario_id}.json"

    def label_path(self, sid: int) -> Path:
        return self.root / "pseudo_labels" / f"{sid:05d}.json"

    def structure(self, sid: int) -> Structure:
        return Structure.from_dict(read_json(self.structure_path(sid)))

    def pool(self, name: str) -> list[int]:
        return list(self.manifest()[name])

    def structures(self, pool: str) -> list[Structure]:
        return [self.structure(sid) for sid in self.pool(pool)]

    def scenarios(self, sid: int) -> list[tuple[FirePoint, SimResult]]:
        out = []
        for path in sorted((self.root / "scenarios").glob(f"{sid:05d}-*.json")):
            d = read_json(path)
            out.append((FirePoint(**d["fire"]), SimResult.from_dict(d["result"])))
        return out

    def pseudo_labels(self, sids) -> dict[int, PseudoLabel]:
        return {sid: PseudoLabel.from_dict(read_json(self.label_path(sid))) for sid in sids}


# generation -----------------------------------------------------------------

def _gen_one(args) -> dict:
    seed, sid = args
    s = generate_structure(derive_seed(seed, sid), structure_id=sid)
    try:
        res = gravity_analysis(s)
        midr, ok = res.midr, gravity_filter(s, res)
    except SingularSystem:
        midr, ok = None, False
    return {"structure": s.to_dict(), "gravity_midr": midr, "accepted": ok}


def generate_dataset(root, count: int, seed: int, labeled_fraction: float = 0.09, jobs: int = 1,
                     manifest: RunManifest | None = None) -> dict:
    """Generate, gravity-filter and partition ``count`` structures."""
    if count < 1:
        raise FiresenseError("count must be positive")
    if not 0.0 <= labeled_fraction <= 1.0:
        raise FiresenseError("labeled fraction must be in [0, 1]")
    ds = Dataset(root)
    rows = _map(_gen_one, [(seed, i) for i in range(count)], jobs)
    accepted, rejected, gmidr = [], [], {}
    for row in rows:
        sid = row["structure"]["id"]
        gmidr[str(sid)] = row["gravity_midr"]
        if row["accepted"]:
            path = ds.structure_path(sid)
            write_json(path, row["structure"])
            if manifest:
                manifest.add_output(path)
            accepted.append(sid)
        else:
            rejected.append(sid)
    rng = np.random.default_rng(derive_seed(seed, 10**6))
    order = rng.permutation(len(accepted))
    n_lab = int(round(labeled_fraction * len(accepted)))
    labeled = sorted(accepted[i] for i in order[:n_lab])
    unlabeled = sorted(accepted[i] for i in order[n_lab:])
    data = {
        "seed": seed,
        "count": count,
        "labeled_fraction": labeled_fraction,
        "labeled": labeled,
        "unlabeled": unlabeled,
        "rejected": rejected,
        "gravity_midr": gmidr,
        "structures": [str(ds.structure_path(s).relative_to(ds.root)) for s in sorted(accepted)],
        "version": __version__,
    }
    write_json(ds.manifest_path, data)
    return data


# simulation -----------------------------------------------------------------

def _sim_one(args) -> dict:
    root, sid, fires, seed = args
    ds = Dataset(root)
    s = ds.structure(sid)
    points = sample_fire_points(s, fires, derive_seed(seed, sid))
    model = FrameModel(s)
    done, written, failed = 0, [], None
    for k, fire in enumerate(points):
        scenario_id = f"{sid:05d}-{k:03d}"
        path = ds.scenario_path(scenario_id)
        if path.is_file():
            try:
                d = read_json(path)
                if FirePoint(**d["fire"]) == fire:
                    done += 1
                    continue
            except (ValueError, KeyError, TypeError):
                pass
        try:
            res = run_scenario(s, fire, scenario_id=scenario_id, model=model)
        except SingularSystem as exc:
            log.warning("structure %d scenario %s: %s", sid, scenario_id, exc)
            failed = str(exc)
            break
        write_json(path, {"fire": asdict(fire), "result": res.to_dict(with_displacements=True)})
        written.append(str(path))
    return {"sid": sid, "skipped": done, "written": written, "failed": failed}


def simulate_dataset(root, fires: int, seed: int, jobs: int = 1, manifest: RunManifest | None = None) -> dict:
    if fires < 1:
        raise FiresenseError("fires must be >= 1")
    ds = Dataset(root).require()
    sids = ds.pool("labeled")
    rows = _map(_sim_one, [(str(ds.root), sid, fires, seed) for sid in sids], jobs)
    summary = {"simulated": 0, "skipped": 0, "failed": {}}
    for row in rows:
        summary["simulated"] += len(row["written"])
        summary["skipped"] += row["skipped"]
        if row["failed"]:
            summary["failed"][str(row["sid"])] = row["failed"]
        if manifest:
            for p in row["written"]:
                manifest.add_output(p)
    return summary


def load_labeled(ds: Dataset, sids=None) -> list[LabeledSample]:
    """Training samples for every simulated scenario of the given structures."""
    sids = ds.pool("labeled") if sids is None else sids
    out = []
    for sid in sids:
        scen = ds.scenarios(sid)
        if not scen:
            continue
        s = ds.structure(sid)
        static = StaticGraph.from_structure(s)
        out.extend(labeled_sample(s, fire, res, static) for fire, res in scen)
    return out
