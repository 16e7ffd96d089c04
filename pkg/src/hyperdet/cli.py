"""Command-line entry point: ``hyperdet gen | train | eval | sweep | report``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config, override
from .diffusion import CascadeDataset, Snapshot, generate_dataset
from .experiments import (
    diffusion_model_sweep,
    early_detection_sweep,
    incompleteness_sweep,
    ablation_sweep,
    split_validation,
)
from .hypergraph import Hypergraph, HypergraphFormatError, clique_hypergraph, load_hypergraph, save_hypergraph
from .irc import EigensolverError
from .metrics import MetricsReport, long_format, snapshot_metrics, write_rows_csv
from .model import classify, load_checkpoint, save_checkpoint, variant_config
from .train import TrainingDiverged, collate, predict, prepare_sample, train_hyperdet

log = logging.getLogger("hyperdet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SWEEP_KINDS = ("early", "incomplete", "ablation", "models")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path(cfg.out) / f"{command}-{stamp}"
        i = 1
        while out.exists():
            out = Path(cfg.out) / f"{command}-{stamp}-{i}"
            i += 1
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    changes = {}
    for flag, key in (
        ("model", "propagation__model"),
        ("delta", "propagation__delta"),
        ("group_coeff", "propagation__group_coeff"),
        ("recovery_prob", "propagation__recovery_prob"),
        ("seed", "propagation__seed"),
        ("count", "count"),
        ("lr_pretrain", "train__lr_pretrain"),
        ("lr_finetune", "train__lr_finetune"),
        ("lam", "train__l2"),
        ("epochs", "train__finetune_epochs"),
        ("pretrain_epochs", "train__pretrain_epochs"),
        ("patience", "train__patience"),
        ("train_seed", "train__seed"),
        ("variant", "variant"),
        ("hypergraph", "hypergraph__path"),
    ):
        changes[key] = getattr(args, flag, None)
    return override(cfg, **changes)


# --- dataset files -----------------------------------------------------------------


def write_snapshots(path: Path, snaps) -> None:
    path.write_text(json.dumps([s.to_json() for s in snaps], sort_keys=True))


def read_snapshots(path: Path) -> list[Snapshot]:
    return [Snapshot.from_json(o) for o in json.loads(Path(path).read_text())]


def read_dataset(data_dir: Path) -> tuple[Hypergraph, CascadeDataset, dict]:
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    g = load_hypergraph(data_dir / "hypergraph.txt")
    ds = CascadeDataset(read_snapshots(data_dir / "train.json"), read_snapshots(data_dir / "test.json"), manifest)
    return g, ds, manifest


# --- commands -------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    g = cfg.hypergraph.load()
    ds = generate_dataset(g, cfg.propagation, cfg.count, cfg.split)
    out = _out_dir(args, cfg, "gen")
    save_hypergraph(g, out / "hypergraph.txt")
    write_snapshots(out / "train.json", ds.train)
    write_snapshots(out / "test.json", ds.test)
    _dump(out / "manifest.json", {"config": cfg.to_json(), "master_seed": cfg.master_seed, "dataset": ds.meta})
    log.info("wrote %d train / %d test cascades to %s", len(ds.train), len(ds.test), out)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    g, ds, data_manifest = read_dataset(args.data)
    mcfg = variant_config(cfg.model, cfg.variant)
    topo = clique_hypergraph(g) if cfg.variant == "woH" else g
    samples = [prepare_sample(topo, s, mcfg) for s in ds.train]
    fit, val = split_validation(samples, cfg.val_fraction)
    if not mcfg.use_autoencoder:
        log.info("variant %s: autoencoder pretraining skipped", cfg.variant)
    out = _out_dir(args, cfg, "train")
    params, report = train_hyperdet(fit, val, mcfg, cfg.train)
    save_checkpoint(params, out / "checkpoint.bin", {"variant": cfg.variant, "master_seed": cfg.master_seed})
    _dump(out / "train_report.json", {"config": cfg.to_json(), "master_seed": cfg.master_seed, "report": report.to_json()})
    _dump(out / "manifest.json", {"config": cfg.to_json(), "master_seed": cfg.master_seed, "data": str(args.data)})
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    g, ds, _ = read_dataset(args.data)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    mcfg = variant_config(cfg.model, cfg.variant)
    params, extra = load_checkpoint(ckpt, expect=mcfg)
    topo = clique_hypergraph(g) if cfg.variant == "woH" else g
    test = [prepare_sample(topo, s, params.cfg) for s in ds.test]
    report = MetricsReport(
        meta={
            "variant": cfg.variant,
            "delta": cfg.propagation.delta,
            "diffusion_model": cfg.propagation.model,
            "incompleteness": 0.0,
            "master_seed": cfg.master_seed,
            "checkpoint": str(ckpt),
            "config": cfg.to_json(),
        }
    )
    for i, probs in enumerate(predict(params, collate(test))):
        report.add(snapshot_metrics(classify(probs), probs[:, 0], test[i].labels), snapshot=i)
    out = _out_dir(args, cfg, "eval")
    report.write(out / "metrics")
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    g = cfg.hypergraph.load()
    exp = cfg.experiment()
    kind = args.kind
    if kind == "early":
        reports, axis = early_detection_sweep(g, exp, cfg.sweep.deltas, cfg.variant), "delta"
    elif kind == "incomplete":
        reports, axis = incompleteness_sweep(g, exp, cfg.sweep.rates, cfg.variant), "incompleteness"
    elif kind == "ablation":
        reports, axis = ablation_sweep(g, exp, cfg.sweep.variants), "variant"
    else:
        reports, axis = diffusion_model_sweep(g, exp, cfg.sweep.models, cfg.variant), "diffusion_model"
    out = _out_dir(args, cfg, f"sweep-{kind}")
    for i, rep in enumerate(reports):
        rep.meta["config"] = cfg.to_json()
        rep.write(out / f"arm{i:02d}_{rep.meta[axis]}")
    write_rows_csv(out / "series_long.csv", long_format(reports, axis))
    _dump(out / "manifest.json", {"config": cfg.to_json(), "master_seed": cfg.master_seed, "kind": kind, "arms": len(reports)})
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    """Summarize every metrics JSON under a directory into one aggregate table."""
    root = Path(args.input)
    if not root.exists():
        raise FileNotFoundError(f"no such directory: {root}")
    rows = []
    for path in sorted(root.rglob("*.json")):
        obj = json.loads(path.read_text())
        if not isinstance(obj, dict) or "aggregate" not in obj:
            continue
        meta = obj.get("meta", {})
        row = {"file": str(path.relative_to(root))}
        for key in ("variant", "delta", "incompleteness", "diffusion_model"):
            row[key] = meta.get(key)
        for metric, agg in obj["aggregate"].items():
            row[f"{metric}_mean"] = agg["mean"]
            row[f"{metric}_std"] = agg["std"]
        rows.append(row)
    target = Path(args.output) if args.output else root / "summary.csv"
    write_rows_csv(target, rows)
    for r in rows:
        print(r["file"], " ".join(f"{k}={r[k]:.3f}" for k in r if k.endswith("_mean") and r[k] is not None))
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperdet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (default: fresh timestamped directory)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--hypergraph", help="hypergraph file (overrides config)")
        sp.add_argument("--variant", help="model variant: full, woH, woD, woE, wAL, wAS, woA, lpsi")

    def propagation(sp):
        sp.add_argument("--model", help="diffusion model: IC, SI, SIS, SIR")
        sp.add_argument("--delta", type=float, help="snapshot spreader fraction")
        sp.add_argument("--count", type=int, help="number of cascades")
        sp.add_argument("--group-coeff", type=float)
        sp.add_argument("--recovery-prob", type=float)

    def training(sp):
        sp.add_argument("--lr-pretrain", type=float)
        sp.add_argument("--lr-finetune", type=float)
        sp.add_argument("--lambda", dest="lam", type=float, help="L2 coefficient")
        sp.add_argument("--epochs", type=int, help="fine-tuning epochs")
        sp.add_argument("--pretrain-epochs", type=int)
        sp.add_argument("--patience", type=int)
        sp.add_argument("--train-seed", type=int, help="parameter initialization seed")

    g = sub.add_parser("gen", help="simulate cascades and write a dataset")
    common(g)
    propagation(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="pretrain and fine-tune on a generated dataset")
    common(t)
    training(t)
    t.add_argument("--data", required=True, help="dataset directory written by 'gen'")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run an experiment sweep end to end")
    common(s)
    propagation(s)
    training(s)
    s.add_argument("kind", choices=SWEEP_KINDS)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize metrics reports under a directory")
    r.add_argument("input")
    r.add_argument("--output")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, HypergraphFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, EigensolverError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
