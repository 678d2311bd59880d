"""Command-line entry point: ``presstyle {gen,train,transfer,eval,har-eval}``.

Settings resolve in this order, later wins: built-in defaults, the JSON
``--config`` file, command-line flags. The seed falls back to the
``PRESSTYLE_SEED`` environment variable, then 0. Every command writes a
``run.json`` holding the resolved settings; passing it back as ``--config``
with ``--threads 1`` reproduces the artifacts byte for byte.

Exit codes: 0 success, 1 runtime failure (one JSON line on stderr),
2 bad flags or config.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .errors import PresstyleError

log = logging.getLogger("presstyle")

SECTIONS = {
    "gen": "generation",
    "train": "training",
    "transfer": "transfer",
    "eval": "evaluation",
    "har-eval": "har",
}
TOP_KEYS = {"command", "seed", "threads", "inputs", *SECTIONS.values()}
INPUT_KEYS = {"manifest", "weights", "in", "identity"}
TRANSFER_KEYS = {"target_sex", "target_weight", "target_height", "stride"}
EVAL_KEYS = {"protocol", "pairing", "stride"}


class ConfigError(ValueError):
    pass


def _section_keys():
    from .har import HarConfig
    from .model import NetConfig
    from .synth import GenerationConfig

    return {
        "generation": {f.name for f in fields(GenerationConfig)},
        "training": {f.name for f in fields(NetConfig)},
        "har": {f.name for f in fields(HarConfig)},
        "transfer": TRANSFER_KEYS,
        "evaluation": EVAL_KEYS,
        "inputs": INPUT_KEYS,
    }


def load_config(path):
    """Read and validate a JSON run config; unknown keys raise ConfigError."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    bad = set(cfg) - TOP_KEYS
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    for name, keys in _section_keys().items():
        sec = cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        bad = set(sec) - keys
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
    return cfg


def _merge(base, flags):
    out = dict(base)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def resolve_seed(args, cfg):
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("PRESSTYLE_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"PRESSTYLE_SEED must be an integer, got {env!r}") from exc
    return 0


def _write_run(out_dir, run):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")


def _abs(p):
    return None if p is None else str(Path(p).resolve())


def _input(args, cfg, name, flag):
    v = flag if flag is not None else cfg.get("inputs", {}).get(name)
    return v


# ---------------------------------------------------------------- commands


def cmd_gen(args, cfg, seed):
    from .synth import GenerationConfig, generate_corpus

    flags = {
        "subjects_per_sex": args.subjects_per_sex,
        "test_subjects_per_sex": args.test_subjects_per_sex,
        "unseen_scripts": args.unseen_scripts,
        "activities": args.activities.split(",") if args.activities else None,
        "duration": args.duration,
        "fps": args.fps,
    }
    sec = _merge(cfg.get("generation", {}), flags)
    sec["seed"] = seed
    gcfg = GenerationConfig.from_dict(sec)
    out = Path(args.out)
    manifest = generate_corpus(gcfg, out, threads=args.threads)
    _write_run(out, {"command": "gen", "seed": seed, "threads": args.threads, "generation": gcfg.to_dict()})
    print(json.dumps({"sequences": len(manifest.entries), "manifest": str(out / "manifest.json")}))
    return 0


def cmd_train(args, cfg, seed):
    from .model import NetConfig, train

    manifest = _input(args, cfg, "manifest", args.manifest)
    if manifest is None:
        raise ConfigError("train needs --manifest (or inputs.manifest in the config)")
    flags = {
        "widths": [int(w) for w in args.widths.split(",")] if args.widths else None,
        "batch_size": args.batch_size,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "steps_per_epoch": args.steps_per_epoch,
        "lr": args.lr,
    }
    sec = _merge(cfg.get("training", {}), flags)
    sec["seed"] = seed
    ncfg = NetConfig.from_dict(sec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        log.info("epoch %d train %.5g val %.5g", rec["epoch"], rec["train_loss"], rec["val_loss"])

    res = train(manifest, ncfg, progress=progress)
    res.model.save(out / "weights.ptnw")
    (out / "history.json").write_text(res.history_json() + "\n")
    _write_run(out, {"command": "train", "seed": seed, "threads": args.threads,
                     "inputs": {"manifest": _abs(manifest)}, "training": ncfg.to_dict()})
    h = res.history
    print(json.dumps({"epochs": len(h), "best_epoch": res.best_epoch, "stopped_early": res.stopped_early,
                      "first_train_loss": h[0]["train_loss"], "final_train_loss": h[-1]["train_loss"],
                      "best_val_loss": min(r["val_loss"] for r in h), "seconds": round(res.seconds, 2)}))
    return 0


def cmd_transfer(args, cfg, seed):
    from .data import AttributeVector, load_sequence, save_sequence
    from .model import TransferNet, transfer

    src = _input(args, cfg, "in", args.inp)
    weights = _input(args, cfg, "weights", args.weights)
    if src is None or weights is None or args.out is None:
        raise ConfigError("transfer needs --in, --weights and --out")
    sec = _merge(cfg.get("transfer", {}), {"target_sex": args.target_sex, "target_weight": args.target_weight,
                                           "target_height": args.target_height, "stride": args.stride})
    missing = [k for k in ("target_sex", "target_weight", "target_height") if k not in sec]
    if missing:
        raise ConfigError(f"transfer needs {', '.join('--' + m.replace('_', '-') for m in missing)}")
    target = AttributeVector(sec["target_sex"], sec["target_weight"], sec["target_height"])
    sec["target_sex"] = target.sex
    sec.setdefault("stride", 30)
    seq = load_sequence(src)
    out = transfer(seq, target, TransferNet.load(weights), stride=int(sec["stride"]))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_sequence(out_path, out)
    run = {"command": "transfer", "seed": seed, "threads": args.threads,
           "inputs": {"in": _abs(src), "weights": _abs(weights)}, "transfer": sec}
    out_path.with_name(out_path.name + ".run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"frames": len(out), "out": str(out_path)}))
    return 0


def cmd_eval(args, cfg, seed):
    from .metrics import evaluate

    manifest = _input(args, cfg, "manifest", args.manifest)
    weights = _input(args, cfg, "weights", args.weights)
    identity = bool(args.identity or cfg.get("inputs", {}).get("identity", False))
    if manifest is None or (weights is None and not identity):
        raise ConfigError("eval needs --manifest and --weights (or --identity)")
    sec = _merge(cfg.get("evaluation", {}), {"protocol": args.protocol, "pairing": args.pairing,
                                             "stride": args.stride})
    sec.setdefault("protocol", "both")
    sec.setdefault("pairing", "identity")
    sec.setdefault("stride", 30)
    model = (lambda s, a: s.replace(attributes=a)) if identity else weights
    report = evaluate(manifest, model, sec["protocol"], sec["pairing"], int(sec["stride"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    inputs = {"manifest": _abs(manifest), "identity": identity}
    if not identity:
        inputs["weights"] = _abs(weights)
    _write_run(out, {"command": "eval", "seed": seed, "threads": args.threads, "inputs": inputs, "evaluation": sec})
    print(report.to_text())
    return 0


def cmd_har(args, cfg, seed):
    from .har import HarConfig, export_clusters_csv, har_protocol, pseudo_label

    manifest = _input(args, cfg, "manifest", args.manifest)
    weights = _input(args, cfg, "weights", args.weights)
    if manifest is None or weights is None:
        raise ConfigError("har-eval needs --manifest and --weights")
    sec = _merge(cfg.get("har", {}), {"iterations": args.iterations, "bandwidth": args.bandwidth})
    sec["seed"] = seed
    hcfg = HarConfig.from_dict(sec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = har_protocol(manifest, weights, hcfg)
    report.save(out / "har_report.json")
    from .data import DatasetManifest

    labeled = pseudo_label(DatasetManifest.load(manifest), hcfg.bandwidth, splits=hcfg.splits, kernel=hcfg.kernel)
    export_clusters_csv(out / "clusters.csv", labeled)
    _write_run(out, {"command": "har-eval", "seed": seed, "threads": args.threads,
                     "inputs": {"manifest": _abs(manifest), "weights": _abs(weights)}, "har": hcfg.to_dict()})
    print(report.to_text())
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "transfer": cmd_transfer, "eval": cmd_eval, "har-eval": cmd_har}


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (a previous run.json works too)")
    common.add_argument("--seed", type=int, help="global seed (default: config, then $PRESSTYLE_SEED, then 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; 1 = deterministic (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="presstyle", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--subjects-per-sex", type=int, help="training subjects per sex (default 8)")
    g.add_argument("--test-subjects-per-sex", type=int, help="held-out subjects per sex (default 0)")
    g.add_argument("--unseen-scripts", action="store_true", default=None,
                   help="also give held-out subjects a second, never-trained script per activity")
    g.add_argument("--activities", help="comma list from walk,exercise,freestyle,act (default all)")
    g.add_argument("--duration", type=float, help="seconds per sequence (default 10)")
    g.add_argument("--fps", type=float, help="frames per second (default 60)")

    t = sub.add_parser("train", parents=[common], help="train a transfer network")
    t.add_argument("--manifest", help="corpus manifest.json")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--widths", help="encoder widths, e.g. 16,32,64 (default)")
    t.add_argument("--batch-size", type=int, help="default 64")
    t.add_argument("--max-epochs", type=int, help="default 500")
    t.add_argument("--patience", type=int, help="default 50")
    t.add_argument("--steps-per-epoch", type=int, help="default 8")
    t.add_argument("--lr", type=float, help="initial learning rate (default 0.01)")

    x = sub.add_parser("transfer", parents=[common],
                       help="re-render a sequence for another body")
    x.add_argument("--in", dest="inp", help="source .pseq")
    x.add_argument("--weights", help="trained .ptnw")
    x.add_argument("--target-weight", type=float, help="kg")
    x.add_argument("--target-height", type=float, help="cm")
    x.add_argument("--target-sex", choices=["male", "female", "m", "f"])
    x.add_argument("--stride", type=int, help="window stride in frames (default 30)")
    x.add_argument("--out", help="output .pseq")

    e = sub.add_parser("eval", parents=[common], help="seen/unseen transfer report")
    e.add_argument("--manifest", help="corpus manifest.json with held-out (test) subjects")
    e.add_argument("--weights", help="trained .ptnw")
    e.add_argument("--identity", action="store_true", default=None,
                   help="score the identity stub (output = input) instead of a network")
    e.add_argument("--protocol", choices=["seen", "unseen", "both"], help="default both")
    e.add_argument("--pairing", choices=["identity", "cross"], help="default identity")
    e.add_argument("--stride", type=int, help="transfer window stride (default 30)")
    e.add_argument("--out", required=True, help="output directory")

    h = sub.add_parser("har-eval", parents=[common],
                       help="real / synthetic / combined activity-recognition comparison")
    h.add_argument("--manifest", help="corpus manifest.json")
    h.add_argument("--weights", help="trained .ptnw used to synthesize")
    h.add_argument("--iterations", type=int, help="seeded repetitions (default 10)")
    h.add_argument("--bandwidth", type=float, help="mean-shift bandwidth, 0 = automatic (default 0)")
    h.add_argument("--out", required=True, help="output directory")
    return p


def _fail(exc):
    msg = " ".join(str(exc).split())
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg}) + "\n")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg = load_config(args.config)
        if cfg.get("command") not in (None, args.command):
            raise ConfigError(f"config was written by {cfg['command']!r}, not {args.command!r}")
        seed = resolve_seed(args, cfg)
    except ConfigError as exc:
        parser.error(str(exc))
    from .numerics import backend

    backend.set_threads(args.threads)
    try:
        return COMMANDS[args.command](args, cfg, seed)
    except ConfigError as exc:
        parser.error(str(exc))
    except (PresstyleError, ValueError, OSError, KeyError) as exc:
        _fail(exc)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
