"""Command-line entry point: ``schgan {synth,train,eval,encode}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""
import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields

from . import __version__, _accel
from .data import DatasetError, SynthConfig, load_dataset, read_features, save_dataset, synth_generate
from .evaluate import DEFAULT_K_GRID, DIRECTIONS, evaluate
from .model import ModelConfig, encode, load_checkpoint, save_checkpoint, write_codes
from .trainer import TrainConfig, TrainLog, train

log = logging.getLogger("schgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

EXPERIMENT_KEYS = {"dataset", "out", "model", "train", "eval_k_grid"}
MODEL_KEYS = {"inter_dim", "code_length"}


class ConfigError(ValueError):
    pass


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from e


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_run_manifest(out_dir, command, config, inputs, outputs):
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_sha256": hashlib.sha256(_canonical(config).encode()).hexdigest(),
        "inputs": {p: _sha256_file(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256_file(p) for p in outputs},
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")


# --------------------------------------------------------------------- synth

def load_synth_config(path, seed=None):
    raw = _read_json(path) if path else {}
    if not isinstance(raw, dict):
        raise ConfigError("synth config must be a JSON object")
    out = raw.pop("out", None)
    known = {f.name for f in fields(SynthConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    if seed is not None:
        raw["seed"] = seed
    try:
        return SynthConfig(**raw), out
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid synth config: {e}") from e


def cmd_synth(args):
    cfg, out = load_synth_config(args.config, args.seed)
    out = args.out or out
    if not out:
        raise ConfigError("no output directory (use --out)")
    _ensure_dir(out)
    manifest = save_dataset(synth_generate(cfg), out)
    files = [manifest] + [os.path.join(out, f) for f in ("image.feat", "text.feat", "labels.json")]
    _write_run_manifest(out, "synth", asdict(cfg), [args.config] if args.config else [], files)
    log.info("wrote %s", manifest)


# --------------------------------------------------------------------- train

def load_experiment(path, args):
    """Resolve an experiment config plus command-line overrides."""
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = set(raw) - EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
    base = os.path.dirname(os.path.abspath(path))
    model = dict(raw.get("model", {}))
    bad = set(model) - MODEL_KEYS
    if bad:
        raise ConfigError(f"unknown model config keys: {sorted(bad)}")
    train_cfg = dict(raw.get("train", {}))
    overrides = {"seed": args.seed, "train_mode": args.mode, "loss_mode": args.loss,
                 "directions": args.direction}
    train_cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.bits is not None:
        model["code_length"] = args.bits
    q = model.get("code_length", 16)
    if not isinstance(q, int) or not 8 <= q <= 256:
        raise ConfigError(f"code_length must be an integer in [8, 256], got {q!r}")
    try:
        tcfg = TrainConfig.from_dict(train_cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid train config: {e}") from e
    dataset = raw.get("dataset")
    if not dataset:
        raise ConfigError("experiment config needs a 'dataset' manifest path")
    if not os.path.isabs(dataset):
        dataset = os.path.join(base, dataset)
    out = args.out or raw.get("out")
    if not out:
        raise ConfigError("no output directory (use --out or 'out')")
    k_grid = raw.get("eval_k_grid", list(DEFAULT_K_GRID))
    if not all(isinstance(k, int) and k >= 1 for k in k_grid):
        raise ConfigError("eval_k_grid must be a list of positive integers")
    return {"dataset": dataset, "out": out, "model": model, "train": tcfg, "eval_k_grid": k_grid}


def _merge_log(out, new_log, state_step, resuming):
    path = os.path.join(out, "trainlog.jsonl")
    prior = []
    if resuming and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                r = json.loads(line)
                if (r["kind"] == "step" and r["step"] < state_step) or \
                        (r["kind"] == "val" and r["step"] <= state_step):
                    prior.append(r)
    with open(path, "w", encoding="utf-8") as fh:
        for r in prior:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        fh.write(new_log.to_jsonl())
    return path


def cmd_train(args):
    exp = load_experiment(args.config, args)
    ds = load_dataset(exp["dataset"])
    mc = ModelConfig(ds.image_dim, ds.text_dim, **exp["model"])
    cfg = exp["train"]
    resume = None
    start_step = 0
    if args.resume:
        models, state = load_checkpoint(args.resume)
        if state.get("train_config") != asdict(cfg):
            raise ConfigError("checkpoint was written with a different train config")
        if models["discriminator"].config != mc:
            raise ConfigError("checkpoint model config does not match the experiment")
        resume = (models, state)
        start_step = int(state["step"])
    out = exp["out"]
    _ensure_dir(out)
    res = train(ds, mc, cfg, resume=resume, checkpoint_dir=out)
    ck = os.path.join(out, "checkpoint.json")
    save_checkpoint(ck, {"generator": res.generator, "discriminator": res.discriminator}, res.state)
    log_path = _merge_log(out, res.log, start_step, resume is not None)
    resolved = {"dataset": exp["dataset"], "out": out, "model": asdict(mc),
                "train": asdict(cfg), "eval_k_grid": exp["eval_k_grid"]}
    inputs = [args.config, exp["dataset"]] + ([args.resume] if args.resume else [])
    _write_run_manifest(out, "train", resolved, inputs, [ck, log_path])
    log.info("trained %d steps; checkpoint %s", len(res.log.steps), ck)


# ---------------------------------------------------------------------- eval

def cmd_eval(args):
    models, _ = load_checkpoint(args.checkpoint)
    if args.model not in models:
        raise ConfigError(f"checkpoint has no {args.model!r} model")
    net = models[args.model]
    ds = load_dataset(args.manifest)
    if (ds.image_dim, ds.text_dim) != (net.config.image_input_dim, net.config.text_input_dim):
        raise DatasetError(f"{args.manifest}: feature dims do not match the checkpoint")
    if not ds.has_evaluation_labels():
        raise DatasetError(f"{args.manifest}: evaluation needs ground-truth labels for every item")
    k_grid = [int(k) for k in args.k_grid.split(",")] if args.k_grid else list(DEFAULT_K_GRID)
    directions = list(DIRECTIONS) if args.direction == "both" else [args.direction]
    _ensure_dir(args.out)
    outputs = []
    for d in directions:
        cfg = {"checkpoint": os.path.basename(args.checkpoint), "model": args.model,
               "k_grid": k_grid}
        rep = evaluate(net, ds, d, k_grid, config=cfg)
        prefix = os.path.join(args.out, f"metrics_{d}")
        rep.write(prefix)
        outputs += [f"{prefix}.json", f"{prefix}_pr.csv", f"{prefix}_topk.csv"]
        print(f"{d}: MAP {rep.map:.4f} ({rep.num_queries} queries, {rep.database_size} items)")
    _write_run_manifest(args.out, "eval", {"direction": args.direction, "model": args.model,
                                           "k_grid": k_grid},
                        [args.checkpoint, args.manifest], outputs)


# -------------------------------------------------------------------- encode

def cmd_encode(args):
    models, _ = load_checkpoint(args.checkpoint)
    if args.model not in models:
        raise ConfigError(f"checkpoint has no {args.model!r} model")
    net = models[args.model]
    x = read_features(args.features)
    if x.shape[1] != net.config.input_dim(args.modality):
        raise DatasetError(f"{args.features}: feature dim {x.shape[1]} does not match the "
                           f"{args.modality} pathway ({net.config.input_dim(args.modality)})")
    codes = encode(net, args.modality, x)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    _ensure_dir(out_dir)
    write_codes(args.out, codes)
    _write_run_manifest(out_dir, "encode", {"modality": args.modality, "model": args.model},
                        [args.checkpoint, args.features], [args.out])


# ---------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="schgan", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker threads for kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", help="JSON synth config (SynthConfig fields, optional 'out')")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train generator and discriminator")
    t.add_argument("--config", required=True, help="JSON experiment config")
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=["schgan", "dis_only"])
    t.add_argument("--loss", choices=["triplet", "literal"])
    t.add_argument("--direction", choices=["both", "t2i", "i2t"])
    t.add_argument("--bits", type=int)
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="Hamming-ranking evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--direction", choices=["both", "t2i", "i2t"], default="both")
    e.add_argument("--model", default="discriminator", choices=["discriminator", "generator"])
    e.add_argument("--k-grid", help="comma-separated K values for topK precision")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("encode", help="write binary codes for a feature file")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--features", required=True)
    c.add_argument("--modality", choices=["image", "text"], required=True)
    c.add_argument("--model", default="discriminator", choices=["discriminator", "generator"])
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_encode)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _accel.set_threads(args.threads)
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - mapped to the runtime exit code
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
