"""Command-line entry points.

Subcommands: gen-data, train, eval, sweep, modality-missing, grad-check.
Each run writes a ``manifest.json`` capturing the command, every resolved
input parameter, and artifact format versions (never a timestamp), plus
SHA-256 digests of input files. ``--from-manifest`` re-runs a recorded
command and must reproduce every emitted byte; output destinations are
deliberately not part of the manifest so replays can write elsewhere.

Exit status: 0 on success, 1 on any runtime error (bad files, config,
failed tolerance), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import checkpoints, config as configlib, corruption, datasets
from . import evalharness, gradsuite, reports, training

logger = logging.getLogger("lnln")

GRAD_TOLERANCE = 1e-4


class CliError(Exception):
    pass


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved_run_config(args):
    """Defaults <- config file <- dotted --set overrides, validated."""
    data = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    configlib.apply_overrides(data, getattr(args, "set", None) or [])
    return configlib.run_config_from_dict(data)


def _write_manifest(out_dir, command, params, inputs=None):
    manifest = reports.build_manifest(
        command, {"params": params}, extra={"inputs": inputs or {}}
    )
    reports.write_json(out_dir / "manifest.json", manifest)
    return manifest


def _params_from_manifest(args, command):
    """Load recorded params for --from-manifest, verifying input digests."""
    with open(args.from_manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("command") != command:
        raise CliError(
            f"manifest records command {manifest.get('command')!r}, "
            f"not {command!r}"
        )
    params = manifest["config"]["params"]
    for label, recorded in manifest.get("inputs", {}).items():
        path = params.get(label)
        if path is None:
            continue
        actual = _sha256(path)
        if actual != recorded:
            raise CliError(
                f"{label} {path!r} changed since the manifest was written "
                f"(sha256 {actual[:12]}… != {recorded[:12]}…)"
            )
    return params


def _load_container(path):
    try:
        return datasets.load_dataset(path)
    except FileNotFoundError:
        raise CliError(f"dataset file not found: {path}") from None


def _load_checkpoint(path):
    try:
        return checkpoints.load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint file not found: {path}") from None


# --- subcommands ------------------------------------------------------------


def cmd_gen_data(args):
    if args.from_manifest:
        p = _params_from_manifest(args, "gen-data")
    else:
        p = {
            "n_train": args.n_train, "n_valid": args.n_valid,
            "n_test": args.n_test, "seq_len": args.seq_len,
            "dim": args.dim, "scheme": args.scheme, "seed": args.seed,
        }
    container = datasets.generate_synthetic(
        p["n_train"], p["n_valid"], p["n_test"], seq_len=p["seq_len"],
        dim=p["dim"], scheme=p["scheme"], seed=p["seed"],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    datasets.save_dataset(container, out)
    manifest = reports.build_manifest("gen-data", {"params": p})
    reports.write_json(out.with_suffix(out.suffix + ".manifest.json"), manifest)
    logger.info("wrote %s (%d/%d/%d samples)", out,
                p["n_train"], p["n_valid"], p["n_test"])
    return 0


def cmd_train(args):
    if args.from_manifest:
        p = _params_from_manifest(args, "train")
        run_cfg = configlib.run_config_from_dict(p["run_config"])
    else:
        run_cfg = _resolved_run_config(args)
        p = {
            "data": args.data,
            "seeds": [int(s) for s in args.seeds],
            "run_config": configlib.to_dict(run_cfg),
        }
    container = _load_container(p["data"])
    out = _out_dir(args)

    summary = {}
    for seed in p["seeds"]:
        train_cfg = dataclasses.replace(run_cfg.train, seed=int(seed))
        result = training.train(container, run_cfg.model, train_cfg)
        seed_dir = out / f"seed-{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        reports.write_json(seed_dir / "history.json", result.history)
        entry = {
            "stopped_epoch": result.stopped_epoch,
            "aborted": result.aborted,
        }
        for tag, ck in (("best_mae", result.best_regression),
                        ("best_acc2", result.best_classification)):
            if ck is None:
                continue
            result.model.store.load_state_dict(ck.state)
            checkpoints.save_checkpoint(
                seed_dir / f"{tag}.npz", result.model,
                annotations={"selected_by": tag, "epoch": ck.epoch,
                             **ck.val_metrics},
            )
            entry[tag] = {"epoch": ck.epoch, **ck.val_metrics}
        summary[str(seed)] = entry
        if result.aborted:
            logger.error("seed %d aborted on non-finite loss", seed)

    reports.write_json(out / "summary.json", summary)
    _write_manifest(out, "train", p, inputs={"data": _sha256(p["data"])})
    if any(v["aborted"] for v in summary.values()):
        raise CliError("training aborted on non-finite loss; see summary.json")
    return 0


def cmd_eval(args):
    if args.from_manifest:
        p = _params_from_manifest(args, "eval")
    else:
        p = {
            "data": args.data, "checkpoint": args.checkpoint,
            "rate": args.rate, "split": args.split, "seed": args.seed,
        }
    if not 0.0 <= p["rate"] <= 1.0:
        raise CliError(f"rate must be in [0, 1], got {p['rate']}")
    container = _load_container(p["data"])
    model = checkpoints.build_model(_load_checkpoint(p["checkpoint"]))
    split = container.splits[p["split"]]
    lang, vis, aud, _ = corruption.corrupt_batch(
        split.lang, split.vis, split.aud, p["rate"],
        (p["seed"], 555, corruption.rate_key(p["rate"])),
        container.header.unknown_vector,
    )
    preds = model.predict(lang, vis, aud)
    report = evalharness.compute_metrics(
        preds, split.labels, container.header.scheme
    )

    out = _out_dir(args)
    reports.write_json(out / "report.json",
                       {"params": p, "metrics": report.as_dict()})
    reports.write_text(out / "report.txt", reports.metrics_table(
        [(f"r={p['rate']:.1f}", report)], report.scheme, label_header="Eval"
    ))
    _write_manifest(out, "eval", p, inputs={
        "data": _sha256(p["data"]), "checkpoint": _sha256(p["checkpoint"]),
    })
    print(reports.metrics_table([(f"r={p['rate']:.1f}", report)],
                                report.scheme, label_header="Eval"), end="")
    return 0


def cmd_sweep(args):
    if args.from_manifest:
        p = _params_from_manifest(args, "sweep")
    else:
        p = {
            "data": args.data, "checkpoint": args.checkpoint,
            "rates": [float(r) for r in args.rates],
            "seeds": [int(s) for s in args.seeds], "split": args.split,
        }
    container = _load_container(p["data"])
    model = checkpoints.build_model(_load_checkpoint(p["checkpoint"]))
    result = evalharness.sweep(
        model, container, rates=p["rates"], seeds=p["seeds"],
        split=p["split"],
    )
    out = _out_dir(args)
    reports.write_json(out / "sweep.json", reports.sweep_to_dict(result))
    reports.write_text(out / "sweep.txt", reports.sweep_table(result))
    reports.write_text(out / "sweep.csv", reports.sweep_csv(result))
    _write_manifest(out, "sweep", p, inputs={
        "data": _sha256(p["data"]), "checkpoint": _sha256(p["checkpoint"]),
    })
    print(reports.sweep_table(result), end="")
    return 0


def cmd_modality_missing(args):
    if args.from_manifest:
        p = _params_from_manifest(args, "modality-missing")
    else:
        combos = args.missing or ["l", "v", "a"]
        p = {
            "data": args.data, "checkpoint": args.checkpoint,
            "missing": [("" if c == "none" else c) for c in combos],
            "seeds": [int(s) for s in args.seeds], "split": args.split,
        }
    container = _load_container(p["data"])
    model = checkpoints.build_model(_load_checkpoint(p["checkpoint"]))
    results = [
        evalharness.modality_missing_eval(
            model, container, combo, seeds=p["seeds"], split=p["split"]
        )
        for combo in p["missing"]
    ]
    out = _out_dir(args)
    reports.write_json(out / "modality_missing.json", {
        "params": p,
        "results": [reports.modality_missing_to_dict(r) for r in results],
    })
    table = reports.modality_missing_table(results)
    reports.write_text(out / "modality_missing.txt", table)
    _write_manifest(out, "modality-missing", p, inputs={
        "data": _sha256(p["data"]), "checkpoint": _sha256(p["checkpoint"]),
    })
    print(table, end="")
    return 0


def cmd_grad_check(args):
    if args.from_manifest:
        p = _params_from_manifest(args, "grad-check")
    else:
        p = {"trials": args.trials, "seed": args.seed,
             "max_coords": args.max_coords}
    per_primitive = gradsuite.run_primitive_suite(
        trials=p["trials"], seed=p["seed"]
    )
    model_err = gradsuite.run_model_loss_check(
        seed=p["seed"], max_coords=p["max_coords"]
    )
    worst_prim = max(per_primitive.values())
    max_err = max(worst_prim, model_err)
    for name in sorted(per_primitive):
        print(f"{name:<22s} {per_primitive[name]:.3e}")
    print(f"{'full-model-loss':<22s} {model_err:.3e}")
    print(f"max error {max_err:.3e} "
          f"({'OK' if max_err < GRAD_TOLERANCE else 'FAIL'}, "
          f"tolerance {GRAD_TOLERANCE:.0e})")
    if args.out_dir is not None:
        out = _out_dir(args)
        reports.write_json(out / "grad_check.json", {
            "params": p, "per_primitive": per_primitive,
            "full_model_loss": model_err, "max_error": max_err,
            "tolerance": GRAD_TOLERANCE,
        })
        _write_manifest(out, "grad-check", p)
    return 0 if max_err < GRAD_TOLERANCE else 1


# --- parser -----------------------------------------------------------------


def _add_common(sub, out_dir=True):
    sub.add_argument("--from-manifest", metavar="PATH", default=None,
                     help="re-run the command recorded in a manifest")
    if out_dir:
        sub.add_argument("--out-dir", default=".",
                         help="directory for reports and the manifest")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lnln",
        description="Noise-resistant multimodal sentiment regression "
                    "with a language-dominant design.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset container")
    g.add_argument("--out", required=True, help="output container path")
    g.add_argument("--n-train", type=int, default=2000)
    g.add_argument("--n-valid", type=int, default=300)
    g.add_argument("--n-test", type=int, default=300)
    g.add_argument("--seq-len", type=int, default=16)
    g.add_argument("--dim", type=int, default=20)
    g.add_argument("--scheme", choices=evalharness.SCHEMES, default="mosi")
    g.add_argument("--seed", type=int, default=0)
    _add_common(g, out_dir=False)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model per seed")
    t.add_argument("--data", required=False, help="dataset container path")
    t.add_argument("--config", default=None, help="JSON run config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. train.lr=3e-4")
    t.add_argument("--seeds", type=int, nargs="+",
                   default=list(configlib.DEFAULT_SEEDS))
    _add_common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics at one missing rate")
    e.add_argument("--data", required=False)
    e.add_argument("--checkpoint", required=False)
    e.add_argument("--rate", type=float, default=0.0)
    e.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    e.add_argument("--seed", type=int, default=configlib.DEFAULT_SEEDS[0])
    _add_common(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="full missing-rate sweep")
    s.add_argument("--data", required=False)
    s.add_argument("--checkpoint", required=False)
    s.add_argument("--rates", type=float, nargs="+",
                   default=list(configlib.DEFAULT_SWEEP_RATES))
    s.add_argument("--seeds", type=int, nargs="+",
                   default=list(configlib.DEFAULT_SEEDS))
    s.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    _add_common(s)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("modality-missing",
                       help="whole-modality erasure evaluation")
    m.add_argument("--data", required=False)
    m.add_argument("--checkpoint", required=False)
    m.add_argument("--missing", action="append", metavar="COMBO",
                   help="modality codes to erase, e.g. l or lv; 'none' for "
                        "the clean anchor; repeatable (default: l, v, a)")
    m.add_argument("--seeds", type=int, nargs="+",
                   default=list(configlib.DEFAULT_SEEDS))
    m.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    _add_common(m)
    m.set_defaults(func=cmd_modality_missing)

    c = sub.add_parser("grad-check",
                       help="finite-difference check of every gradient")
    c.add_argument("--trials", type=int, default=5)
    c.add_argument("--seed", type=int, default=7)
    c.add_argument("--max-coords", type=int, default=3,
                   help="coordinates sampled per parameter in the "
                        "full-model check")
    c.add_argument("--out-dir", default=None,
                   help="also write grad_check.json here")
    c.add_argument("--from-manifest", metavar="PATH", default=None)
    c.set_defaults(func=cmd_grad_check)

    return parser


def _require(args, names):
    missing = [n for n in names
               if getattr(args, n.replace("-", "_"), None) is None]
    if missing and not args.from_manifest:
        raise CliError(
            "missing required argument(s): "
            + ", ".join(f"--{n}" for n in missing)
        )


_REQUIRED = {
    "train": ("data",),
    "eval": ("data", "checkpoint"),
    "sweep": ("data", "checkpoint"),
    "modality-missing": ("data", "checkpoint"),
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = (logging.DEBUG if args.verbose
             else logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        _require(args, _REQUIRED.get(args.command, ()))
        return args.func(args)
    except (CliError, checkpoints.CheckpointError, datasets.DatasetError,
            ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
