"""Command-line entry point: ``firesense <command> ...``.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics
from .errors import FiresenseError
from .gnn import GnnConfig, MidrModel, ModelBundle, TrainConfig, split_by_structure, train_two_step
from .graph import GraphBatch
from .mfsp import LossConfig, MfspModel, predict_points, pseudo_label, room_diagonal, train_mfsp, vfp_spread
from .pipeline import (Dataset, RunManifest, default_jobs, derive_seed, generate_dataset, load_labeled,
                       simulate_dataset, write_json)

log = logging.getLogger("firesense")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _fraction(value: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("expected a value in [0, 1]")
    return v


def _positive(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _add_training(p: argparse.ArgumentParser):
    p.add_argument("--size", choices=("small", "large"), default="small")
    p.add_argument("--edge-update", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--epochs", type=int, default=200, help="epoch cap per training step")
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--test-fraction", type=_fraction, default=0.2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firesense", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate and gravity-filter structures")
    p.add_argument("--count", type=_positive, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--labeled-fraction", type=_fraction, default=0.09)
    p.add_argument("--jobs", type=_positive, default=default_jobs())

    p = sub.add_parser("simulate", help="run fire scenarios on labeled structures")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--fires", type=_positive, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_positive, default=default_jobs())

    p = sub.add_parser("train-midr", help="train the MIDR surrogate")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--method", choices=("proposed", "strawman1", "strawman2"), default="proposed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    _add_training(p)

    p = sub.add_parser("pseudo-label", help="label unlabeled structures with the agent's argmax room")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--agent", type=Path, required=True)

    p = sub.add_parser("train-mfsp", help="train the MFSP predictor")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--agent", type=Path, required=True)
    p.add_argument("--loss", choices=("mse", "hybrid"), default="mse")
    p.add_argument("--w1", type=float, default=50.0)
    p.add_argument("--init", choices=("de-novo", "transfer"), default="transfer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    _add_training(p)

    p = sub.add_parser("eval", help="evaluate trained models on held-out splits")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--midr-model", type=Path, default=None)
    p.add_argument("--mfsp-model", type=Path, default=None)
    p.add_argument("--agent", type=Path, default=None, help="agent for MIDR at predicted rooms")
    return parser


def _config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, patience=args.patience,
                       seed=args.seed)


def cmd_gen(args) -> int:
    man = RunManifest(args.out, "gen", _config(args), args.seed)
    t = time.perf_counter()
    data = generate_dataset(args.out, args.count, args.seed, args.labeled_fraction, args.jobs, man)
    man.time("generate", time.perf_counter() - t)
    man.add_output(Dataset(args.out).manifest_path)
    man.finish(accepted=len(data["labeled"]) + len(data["unlabeled"]), rejected=len(data["rejected"]))
    print(f"{len(data['labeled'])} labeled, {len(data['unlabeled'])} unlabeled, {len(data['rejected'])} rejected")
    return 0


def cmd_simulate(args) -> int:
    ds = Dataset(args.dataset).require()
    man = RunManifest(ds.root, "simulate", _config(args), args.seed)
    summary = simulate_dataset(ds.root, args.fires, args.seed, args.jobs, man)
    man.finish(**summary)
    print(f"{summary['simulated']} simulated, {summary['skipped']} already done, "
          f"{len(summary['failed'])} structure(s) flagged")
    return 0


def _midr_split(ds: Dataset, test_fraction: float, seed: int):
    return split_by_structure(ds.pool("labeled"), test_fraction, derive_seed(seed, 1))


def cmd_train_midr(args) -> int:
    ds = Dataset(args.dataset).require()
    out = args.out or ds.root / "models" / f"midr-{args.method}.bundle"
    man = RunManifest(ds.root, "train-midr", _config(args), args.seed)
    train_ids, test_ids = _midr_split(ds, args.test_fraction, args.seed)
    train = load_labeled(ds, sorted(train_ids))
    model = MidrModel(GnnConfig.of_size(args.size, args.edge_update), seed=args.seed, method=args.method)
    t = time.perf_counter()
    bundle = train_two_step(model, train, _train_config(args))
    man.time("train", time.perf_counter() - t)
    bundle.extra.update(test_ids=sorted(test_ids), train_ids=sorted(train_ids))
    bundle.save(out)
    man.add_output(out)
    man.finish(parameters=model.num_parameters())
    print(f"saved {out} ({model.num_parameters()} parameters)")
    return 0


def _load_agent(path: Path) -> MidrModel:
    if not Path(path).is_file():
        raise FiresenseError(f"no model bundle at {path}")
    bundle = ModelBundle.load(path)
    if bundle.kind != "midr":
        raise FiresenseError(f"{path} is not a MIDR model bundle")
    return MidrModel.from_bundle(bundle)


def cmd_pseudo_label(args) -> int:
    ds = Dataset(args.dataset).require()
    man = RunManifest(ds.root, "pseudo-label", _config(args), None)
    agent = _load_agent(args.agent)
    man.add_input(args.agent)
    for sid in ds.pool("unlabeled"):
        label = pseudo_label(ds.structure(sid), agent)
        path = ds.label_path(sid)
        write_json(path, label.to_dict())
        man.add_output(path)
    man.finish(labeled=len(ds.pool("unlabeled")))
    print(f"pseudo-labeled {len(ds.pool('unlabeled'))} structures")
    return 0


def _mfsp_split(ds: Dataset, test_fraction: float, seed: int):
    return split_by_structure(ds.pool("unlabeled"), test_fraction, derive_seed(seed, 2))


def cmd_train_mfsp(args) -> int:
    ds = Dataset(args.dataset).require()
    out = args.out or ds.root / "models" / "mfsp.bundle"
    man = RunManifest(ds.root, "train-mfsp", _config(args), args.seed)
    agent = _load_agent(args.agent)
    man.add_input(args.agent)
    train_ids, test_ids = _mfsp_split(ds, args.test_fraction, args.seed)
    structures = [ds.structure(sid) for sid in sorted(train_ids)]
    labels = ds.pseudo_labels(sorted(train_ids))
    if args.init == "transfer":
        model = MfspModel.from_agent(agent, seed=args.seed)
    else:
        model = MfspModel(GnnConfig.of_size(args.size, args.edge_update), "de_novo", seed=args.seed)
    t = time.perf_counter()
    bundle = train_mfsp(model, structures, labels, agent, LossConfig(args.loss, args.w1), _train_config(args))
    man.time("train", time.perf_counter() - t)
    bundle.extra.update(test_ids=sorted(test_ids), train_ids=sorted(train_ids))
    bundle.save(out)
    man.add_output(out)
    man.finish()
    print(f"saved {out}")
    return 0


def cmd_eval(args) -> int:
    ds = Dataset(args.dataset).require()
    if args.midr_model is None and args.mfsp_model is None:
        raise FiresenseError("nothing to evaluate: pass --midr-model and/or --mfsp-model")
    man = RunManifest(ds.root, "eval", _config(args), None)
    reports = ds.root / "reports"
    if args.midr_model is not None:
        bundle = ModelBundle.load(args.midr_model)
        model = MidrModel.from_bundle(bundle)
        man.add_input(args.midr_model)
        preds, truth = {}, {}
        for sid in bundle.extra["test_ids"]:
            items = load_labeled(ds, [sid])
            if not items:
                continue
            p = model.predict_batch(GraphBatch([model.prepare(it.sample) for it in items]))
            for it, v in zip(items, p):
                preds[(sid, it.scenario_id)] = float(v)
                truth[(sid, it.scenario_id)] = it.midr
        rep = metrics.midr_eval(preds, truth)
        metrics.write_json(rep, reports / "midr_eval.json")
        metrics.write_table(rep.ccdf, reports / "midr_ccdf.csv", ("rho_s", "fraction_above"))
        man.add_output(reports / "midr_eval.json")
        man.add_output(reports / "midr_ccdf.csv")
        print(f"MIDR: mean rho_s {rep.spearman_mean}, MAE {rep.mae:.4f}, MSE {rep.mse:.4f}")
    if args.mfsp_model is not None:
        bundle = ModelBundle.load(args.mfsp_model)
        model = MfspModel.from_bundle(bundle)
        man.add_input(args.mfsp_model)
        sids = bundle.extra["test_ids"]
        structures = {sid: ds.structure(sid) for sid in sids}
        labels = ds.pseudo_labels(sids)
        pts = predict_points(model, [structures[s] for s in sids]) if sids else np.zeros((0, 3))
        preds = {sid: tuple(map(float, p)) for sid, p in zip(sids, pts)}
        rep = metrics.mfsp_eval(preds, labels, structures)
        out = rep.to_dict()
        if sids:
            spread = vfp_spread(model, [structures[s] for s in sids], seed=0)
            diag = np.array([room_diagonal(structures[s]) for s in sids])
            out["vfp_spread_mean"] = float(spread.mean())
            out["vfp_spread_below_room_diagonal"] = float(np.mean(spread < diag))
        metrics.write_json(out, reports / "mfsp_eval.json")
        for key, table in rep.cdf.items():
            path = reports / f"mfsp_cdf_{key}.csv"
            metrics.write_table([(float(t), v) for t, v in table.items()], path, (key, "fraction_at_most"))
            man.add_output(path)
        man.add_output(reports / "mfsp_eval.json")
        print(f"MFSP: e {rep.e:.3f} m, room error {rep.e_room:.3f}, rank {rep.rank:.2f}")
    man.finish()
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "simulate": cmd_simulate,
    "train-midr": cmd_train_midr,
    "pseudo-label": cmd_pseudo_label,
    "train-mfsp": cmd_train_mfsp,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FiresenseError, OSError) as exc:
        print(f"firesense: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
