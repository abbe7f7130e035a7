"""Command-line entry point: ``cedn <subcommand> ...``.

Machine-readable outputs go to files; progress and diagnostics go to stderr.
"""
import argparse
from concurrent.futures import ThreadPoolExecutor
import glob
import hashlib
import json
import os
import sys
import time
import zlib

import numpy as np

from . import __version__
from .errors import CednError, ConfigError, InputError
from .imageio import read_pgm, to_uint8, write_pnm
from .synth import SceneSpec, generate_dataset, load_dataset, load_manifest, save_dataset

CONFIG_SECTIONS = ("scene", "network", "train", "crf", "metrics", "proposals")


# -------------------------------------------------------------- plumbing

def substream(seed, name):
    """Independent generator for one named use of the master seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def load_config(path):
    if not path:
        return {}
    if not os.path.exists(path):
        raise InputError(f"config file {path} not found")
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object with sections {list(CONFIG_SECTIONS)}")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}; expected {list(CONFIG_SECTIONS)}")
    return cfg


def _build(cls, section, values, **defaults):
    d = dict(defaults)
    d.update(values or {})
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"config section {section!r}: {exc}", stage=section) from None


def provenance(args, cfg):
    skip = {"func", "out", "data", "pred", "proposals", "model", "inputs", "refined"}
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    blob = json.dumps({"settings": settings, "config": cfg}, sort_keys=True, default=str)
    return {"config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16], "seed": args.seed,
            "command": args.command, "version": __version__}


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def log(msg):
    print(msg, file=sys.stderr, flush=True)


def require_dir(path, what, hint=""):
    if not path or not os.path.isdir(path):
        raise InputError(f"{what} directory {path!r} does not exist{hint}")


def pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _sample_ids(data):
    return [e["id"] for e in load_manifest(data)["samples"]]


def _read_maps(pred_dir, ids):
    maps = []
    for sid in ids:
        path = os.path.join(pred_dir, sid + ".pgm")
        if not os.path.exists(path):
            raise InputError(f"missing contour map {path}; run detect first")
        maps.append(read_pgm(path).astype(np.float64) / 255.0)
    return maps


# ----------------------------------------------------------- subcommands

def cmd_gen_data(args, cfg):
    scene = dict(cfg.get("scene", {}))
    for key in ("height", "width"):
        if getattr(args, key):
            scene[key] = getattr(args, key)
    spec = _build(SceneSpec, "scene", scene, seed=args.seed)
    spec.validate()
    samples = generate_dataset(spec, args.count)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(args.out, samples, spec)
    log(f"wrote {len(samples)} scenes to {args.out}")
    return 0


def cmd_refine(args, cfg):
    from .refine import CrfParams, refine_annotation

    require_dir(args.data, "dataset", "; run gen-data first")
    params = _build(CrfParams, "crf", cfg.get("crf")).validate()
    samples = load_dataset(args.data)
    ids = _sample_ids(args.data)
    os.makedirs(os.path.join(args.out, "labels"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "contours"), exist_ok=True)

    def run(k):
        s = samples[k]
        labels, contours, res = refine_annotation(s.annotation, to_uint8(s.image), params)
        write_pnm(os.path.join(args.out, "labels", ids[k] + ".pgm"), labels.astype(np.uint8))
        write_pnm(os.path.join(args.out, "contours", ids[k] + ".pgm"), contours.astype(np.uint8) * 255)
        coarse = s.annotation.label_map()
        return {"id": ids[k], "iterations": res.iterations, "converged": bool(res.converged),
                "error_refined": float(np.mean(labels != s.labels)),
                "error_coarse": float(np.mean(coarse != s.labels))}

    t0 = time.time()
    rows = pmap(run, range(len(samples)), args.threads)
    log(f"refined {len(rows)} annotations in {time.time() - t0:.1f}s")
    write_json(os.path.join(args.out, "refine.json"),
               {"provenance": provenance(args, cfg), "crf": params.to_dict(), "images": rows})
    return 0


def _split(n, val_count):
    val_count = min(val_count, n - 1) if n > 1 else 0
    return list(range(n - val_count)), list(range(n - val_count, n))


def cmd_train(args, cfg):
    from .model import NetworkConfig, TrainConfig, build_network, train
    from .model.network import config_to_json

    require_dir(args.data, "dataset", "; run gen-data first")
    net_cfg = NetworkConfig.from_preset(args.preset, **cfg.get("network", {}))
    base = TrainConfig.desk if args.preset == "desk" else TrainConfig.paper
    overrides = dict(cfg.get("train", {}))
    if args.fine_tune:
        overrides.setdefault("lr", 1e-5)
        overrides.setdefault("epochs", 100)
    for key in ("epochs", "lr", "crop"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    overrides["seed"] = args.seed
    try:
        tcfg = base(**overrides).validate(net_cfg.stages)
    except TypeError as exc:
        raise ConfigError(f"config section 'train': {exc}", stage="train") from None
    samples = load_dataset(args.data)
    ids = _sample_ids(args.data)
    if args.refined:
        require_dir(args.refined, "refined annotation", "; run refine first")
        targets = [read_pgm(os.path.join(args.refined, "contours", i + ".pgm")) > 0 for i in ids]
    else:
        targets = [s.contours for s in samples]
    tr, va = _split(len(samples), args.val_count)
    train_set = [(samples[i].image, targets[i]) for i in tr]
    # validation always scores against exact contours
    val_set = [(samples[i].image, samples[i].contours) for i in va]

    net = build_network(net_cfg, substream(args.seed, "init"))
    if args.init:
        from .tensor import load_tensors
        net.load_state_dict(load_tensors(args.init))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "network.json"), "w") as fh:
        fh.write(config_to_json(net_cfg))
    write_json(os.path.join(args.out, "train.json"), tcfg.to_dict())
    t0 = time.time()
    history = train(net, train_set, tcfg, val=val_set or None, log_path=os.path.join(args.out, "log.csv"),
                    checkpoint_dir=os.path.join(args.out, "checkpoints"), rng=substream(args.seed, "crops"),
                    dropout_rng=substream(args.seed, "dropout"), verbose=True)
    from .tensor import save_tensors
    save_tensors(os.path.join(args.out, "model.cftn"), net.state_dict())
    write_json(os.path.join(args.out, "report.json"),
               {"provenance": provenance(args, cfg), "log": history, "train_images": len(tr),
                "val_images": len(va), "seconds": round(time.time() - t0, 1)})
    return 0


def load_model(model_dir):
    from .model import build_network
    from .model.network import config_from_dict
    from .tensor import load_tensors

    require_dir(model_dir, "model", "; run train first")
    with open(os.path.join(model_dir, "network.json")) as fh:
        net_cfg = config_from_dict(json.load(fh))
    net = build_network(net_cfg, np.random.default_rng(0))
    weights = os.path.join(model_dir, "model.cftn")
    if not os.path.exists(weights):
        raise InputError(f"{weights} not found; training did not finish")
    net.load_state_dict(load_tensors(weights))
    return net


def cmd_detect(args, cfg):
    from .model import predict

    require_dir(args.data, "dataset", "; run gen-data first")
    net = load_model(args.model)
    samples = load_dataset(args.data)
    ids = _sample_ids(args.data)
    os.makedirs(args.out, exist_ok=True)
    # the network caches activations, so inference stays sequential
    for sid, s in zip(ids, samples):
        write_pnm(os.path.join(args.out, sid + ".pgm"), to_uint8(predict(net, s.image)))
    log(f"wrote {len(ids)} contour maps to {args.out}")
    return 0


def cmd_eval_contours(args, cfg):
    from .metrics import default_thresholds, default_tolerance, evaluate_contours, write_pr_csv

    require_dir(args.data, "dataset", "; run gen-data first")
    require_dir(args.pred, "prediction", "; run detect first")
    mcfg = dict(cfg.get("metrics", {}))
    unknown = set(mcfg) - {"tolerance_fraction", "thresholds", "thin_gt", "nms"}
    if unknown:
        raise ConfigError(f"config section 'metrics': unknown keys {sorted(unknown)}", stage="metrics")
    ids = _sample_ids(args.data)
    samples = load_dataset(args.data)
    preds = _read_maps(args.pred, ids)
    frac = mcfg.get("tolerance_fraction", 0.0075)
    tol = frac * float(np.hypot(*samples[0].contours.shape))
    if any(abs(default_tolerance(s.contours.shape, frac) - tol) > 1e-12 for s in samples):
        tol = None  # mixed image sizes: per-image default
    rep = evaluate_contours(preds, [s.contours for s in samples], default_thresholds(mcfg.get("thresholds", 33)),
                            tol=tol, apply_nms=mcfg.get("nms", True), thin_gt=mcfg.get("thin_gt", True))
    os.makedirs(args.out, exist_ok=True)
    write_pr_csv(os.path.join(args.out, "pr.csv"), rep.curve)
    summary = rep.summary()
    summary["provenance"] = provenance(args, cfg)
    summary["tolerance_fraction"] = frac
    write_json(os.path.join(args.out, "summary.json"), summary)
    log(f"ODS {rep.ods_f:.4f} (t={rep.ods_t:.3f})  OIS {rep.ois_f:.4f}  AP {rep.ap:.4f}")
    return 0


def cmd_gen_proposals(args, cfg):
    from .proposals import proposals_from_contours, save_proposals

    pcfg = dict(cfg.get("proposals", {}))
    max_count = args.max_count or pcfg.get("max_count", 1000)
    if args.use_gt:
        require_dir(args.data, "dataset", "; run gen-data first")
        ids = _sample_ids(args.data)
        maps = [s.contours.astype(np.float64) for s in load_dataset(args.data)]
    else:
        require_dir(args.pred, "prediction", "; run detect first")
        ids = sorted(os.path.basename(p)[:-4] for p in glob.glob(os.path.join(args.pred, "*.pgm")))
        if not ids:
            raise InputError(f"no contour maps (*.pgm) in {args.pred}")
        maps = _read_maps(args.pred, ids)
    os.makedirs(args.out, exist_ok=True)

    def run(k):
        props = proposals_from_contours(maps[k], max_count, ids[k])
        save_proposals(os.path.join(args.out, ids[k] + ".json"), props)
        return len(props)

    counts = pmap(run, range(len(ids)), args.threads)
    log(f"wrote proposals for {len(ids)} images (mean {np.mean(counts):.0f} per image)")
    return 0


def cmd_eval_proposals(args, cfg):
    from .proposals import ar_vs_count, evaluate_proposals, load_proposals, write_ar_csv
    from .synth import SHAPE_CLASSES

    require_dir(args.data, "dataset", "; run gen-data first")
    require_dir(args.proposals, "proposal", "; run gen-proposals first")
    ids = _sample_ids(args.data)
    samples = load_dataset(args.data)
    sets = []
    for sid in ids:
        path = os.path.join(args.proposals, sid + ".json")
        if not os.path.exists(path):
            raise InputError(f"missing proposals {path}; run gen-proposals first")
        sets.append(load_proposals(path))
    gts = [s.masks for s in samples]
    rep = evaluate_proposals(sets, gts, [s.classes for s in samples], known=SHAPE_CLASSES)
    counts = [c for c in (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000) if c <= max(len(p) for p in sets)]
    os.makedirs(args.out, exist_ok=True)
    write_ar_csv(os.path.join(args.out, "ar_vs_count.csv"), ar_vs_count(sets, gts, counts))
    rep["provenance"] = provenance(args, cfg)
    write_json(os.path.join(args.out, "report.json"), rep)
    log(f"AR {rep['ar']:.4f}  ABO {rep['abo']:.4f}  ({rep['num_proposals']:.0f} proposals/image)")
    return 0


def cmd_plot(args, cfg):
    from .plots import plot_csv

    os.makedirs(args.out, exist_ok=True)
    for path in args.inputs:
        if not os.path.exists(path):
            raise InputError(f"{path} not found")
        stem = os.path.basename(path).rsplit(".", 1)[0]
        svg = os.path.join(args.out, stem + ".svg")
        try:
            kind = plot_csv(path, svg)
        except (ValueError, KeyError) as exc:
            raise InputError(str(exc)) from None
        log(f"{kind} chart -> {svg}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="workers for per-image stages")
    common.add_argument("--preset", choices=["desk", "paper"], default="desk", help="network scale preset")
    common.add_argument("--config", help="JSON config with sections " + ", ".join(CONFIG_SECTIONS))

    p = argparse.ArgumentParser(prog="cedn", description="Contour detection lab.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=64)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("refine", parents=[common], help="dense-CRF refinement of coarse annotations")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("train", parents=[common], help="train the contour network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--refined", help="refine output to use as training targets (default: exact contours)")
    s.add_argument("--val-count", type=int, default=0, help="hold out the last N scenes for validation")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--crop", type=int)
    s.add_argument("--fine-tune", action="store_true", help="lr 1e-5, 100 epochs unless overridden")
    s.add_argument("--init", help="CFTN weights to start from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", parents=[common], help="contour maps for every scene")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval-contours", parents=[common], help="ODS/OIS/AP against exact contours")
    s.add_argument("--pred", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_contours)

    s = sub.add_parser("gen-proposals", parents=[common], help="region proposals from contour maps")
    s.add_argument("--pred")
    s.add_argument("--data")
    s.add_argument("--use-gt", action="store_true", help="use the dataset's exact contours")
    s.add_argument("--out", required=True)
    s.add_argument("--max-count", type=int)
    s.set_defaults(func=cmd_gen_proposals)

    s = sub.add_parser("eval-proposals", parents=[common], help="AR/ABO against instance masks")
    s.add_argument("--proposals", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_proposals)

    s = sub.add_parser("plot", parents=[common], help="SVG charts from pr.csv / ar_vs_count.csv")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (CednError, OSError) as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        for attr in ("stage", "offset", "epoch", "step", "param", "axis"):
            if getattr(exc, attr, None) is not None:
                diag[attr] = getattr(exc, attr)
        print("cedn: error: " + json.dumps(diag), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
