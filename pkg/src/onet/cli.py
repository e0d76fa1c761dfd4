"""Command-line entry point: ``onet <subcommand> ...``.

Configuration comes from an optional YAML/JSON file with ``model``, ``train``,
``data`` and ``eval`` sections; flags override file values. Every subcommand
that writes artifacts also writes ``resolved-config.json`` in the same
format, so ``--config DIR/resolved-config.json`` repeats the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .datapipe import (augment_sample, load_arrays, load_image, load_manifest, preprocess_sample, write_image,
                       write_manifest, write_mask)
from .datapipe.image import write_ppm
from .datapipe.transforms import extract_roi, from_probability, hist_equalize, to_tensor
from .graph import format_shape_table, grad_check, randomize_biases
from .metrics import binarize, evaluate, overlay_render, predict
from .models import ModelConfig, build_model, layer_table, verify_table1
from .optim import TrainConfig, train

log = logging.getLogger("onet")

SECTIONS = ("model", "train", "data", "eval", "infer")
DATA_DEFAULTS = {"view": "CC", "abn_type": None, "split": "train"}
EVAL_DEFAULTS = {"tau": 0.2, "min_area": 50, "threshold": 0.5}
# recorded in resolved configs for provenance; flags supply them on re-runs
INFO_KEYS = {"manifest", "checkpoint", "size", "count", "seed"}
TOY_MODEL = {"input_size": 16, "base_channels": 2, "depth": 2}


class CliError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    data = data or {}
    if not isinstance(data, dict):
        raise CliError(f"{path}: config must be a mapping")
    unknown = set(data) - set(SECTIONS) - {"command"}
    if unknown:
        raise CliError(f"{path}: unknown config sections {sorted(unknown)}")
    return data


def _section(cfg: dict, name: str, defaults: dict | None = None) -> dict:
    out = dict(defaults or {})
    given = cfg.get(name) or {}
    if defaults is not None:
        unknown = set(given) - set(defaults) - INFO_KEYS
        if unknown:
            raise CliError(f"unknown {name} config keys: {sorted(unknown)}")
    out.update({k: v for k, v in given.items() if k not in INFO_KEYS})
    return out


def _override(d: dict, args, mapping: dict[str, str]) -> dict:
    for flag, key in mapping.items():
        val = getattr(args, flag, None)
        if val is not None:
            d[key] = val
    return d


def model_config(cfg: dict, args, base: dict | None = None) -> ModelConfig:
    d = dict(base or {})
    d.update(cfg.get("model") or {})
    _override(d, args, {"arch": "arch", "precision": "precision"})
    mc = ModelConfig.from_dict(d)
    mc.validate()
    return mc


def write_resolved(out: Path, command: str, **sections) -> None:
    doc = {"command": command}
    doc.update({k: v for k, v in sections.items() if v is not None})
    (out / "resolved-config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(n):
    if n is None:
        return nullcontext()
    return threadpool_limits(limits=n)


# subcommands

def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    data = _override(_section(cfg, "data", DATA_DEFAULTS), args, {"view": "view", "abn_type": "abn_type"})
    size = args.size or (cfg.get("model") or {}).get("input_size", 1024)
    ds = load_manifest(args.manifest, data["view"], data["abn_type"])
    out = _outdir(args.out)
    emitted = []
    for s in ds:
        sample, roi = preprocess_sample(s, size)
        emitted.append(_emit(out, sample, roi))
        print(f"{sample.id} {roi.width}x{roi.height}")
    write_manifest(out / "manifest.csv", emitted)
    write_resolved(out, "preprocess", data={**data, "manifest": str(Path(args.manifest).resolve()), "size": size})
    print(f"wrote {len(emitted)} samples to {out / 'manifest.csv'}")
    return 0


def _emit(out: Path, sample, roi):
    img_path = out / f"{sample.id}.pgm"
    write_image(img_path, roi)
    mask_path = None
    if roi.mask is not None:
        mask_path = out / f"{sample.id}_mask.pgm"
        write_mask(mask_path, roi.mask)
    return sample.moved(image=img_path, mask=mask_path)


def cmd_augment(args) -> int:
    cfg = load_config(args.config)
    data = _override(_section(cfg, "data", DATA_DEFAULTS), args, {"view": "view", "abn_type": "abn_type"})
    size = args.size or (cfg.get("model") or {}).get("input_size", 1024)
    if args.count < 1:
        raise CliError("--count must be >= 1")
    ds = load_manifest(args.manifest, data["view"], data["abn_type"])
    out = _outdir(args.out)
    emitted = []
    for s in ds:
        img = load_image(s.image, s.mask)
        for k in range(args.count):
            sample, roi = augment_sample(s, args.seed, size, img, index=k)
            emitted.append(_emit(out, sample, roi))
            print(sample.id)
    write_manifest(out / "manifest.csv", emitted)
    write_resolved(out, "augment", data={**data, "manifest": str(Path(args.manifest).resolve()), "size": size,
                                         "count": args.count, "seed": args.seed})
    print(f"wrote {len(emitted)} pseudo-samples to {out / 'manifest.csv'}")
    return 0


def cmd_shapes(args) -> int:
    cfg = load_config(args.config)
    mc = model_config(cfg, args)
    g = build_model(mc)
    if args.verify_table1:
        rep = verify_table1(g)
        print(rep.to_text())
        return 0 if rep.passed else 1
    print(format_shape_table(layer_table(g)))
    print(f"parameters: {g.param_count()}")
    return 0


def _train_config(cfg: dict, args, mc: ModelConfig) -> TrainConfig:
    d = TrainConfig().to_dict()
    d.update(cfg.get("train") or {})
    _override(d, args, {"max_epochs": "max_epochs", "max_steps": "max_steps", "batch": "batch_size",
                        "stop_delta": "stop_delta", "seed": "seed", "augment": "augment"})
    d["precision"] = mc.precision
    tc = TrainConfig.from_dict(d)
    tc.validate()
    return tc


def _select(ds, split: str):
    if split == "all":
        return ds
    sub = ds.split(split)
    if not len(sub):
        raise CliError(f"manifest has no {split} samples after filtering")
    return sub


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    mc = model_config(cfg, args)
    tc = _train_config(cfg, args, mc)
    data = _override(_section(cfg, "data", DATA_DEFAULTS), args,
                     {"view": "view", "abn_type": "abn_type", "split": "split"})
    manifest = Path(args.manifest).resolve()
    out = _outdir(args.out)
    write_resolved(out, "train", model=mc.to_dict(), train=tc.to_dict(), data={**data, "manifest": str(manifest)})
    ds = _select(load_manifest(manifest, data["view"], data["abn_type"]), data["split"])
    print(ds.summary())
    g = build_model(mc, seed=tc.seed)
    arrays = load_arrays(ds, mc.input_size, tc.augment, tc.seed, g.dtype)
    print(f"training {mc.arch} on {len(arrays)} samples, {g.param_count()} parameters")

    def report(rec):
        print(f"epoch {rec.epoch} loss {rec.loss:.6f} steps {rec.steps}{' stop' if rec.stopped_early else ''}",
              flush=True)

    state, tlog = train(g, arrays.inputs, arrays.targets, tc, on_epoch=report)
    tlog.write(out / "train_log.jsonl")
    save_checkpoint(out / "checkpoint.onet", g, state, mc)
    print(f"wrote {out / 'checkpoint.onet'} after {len(tlog.records)} epochs")
    return 0


def _load_model(path):
    ckpt = load_checkpoint(path)
    g = build_model(ckpt.config)
    load_checkpoint(path, g)
    return ckpt.config, g


def cmd_infer(args) -> int:
    mc, g = _load_model(args.checkpoint)
    img = load_image(args.image)
    s = mc.input_size
    if (img.width, img.height) != (s, s) or args.center is not None:
        center = args.center or ((img.width - 1) / 2, (img.height - 1) / 2)
        img = extract_roi(img, center, s)
    img = hist_equalize(img)
    x, _ = to_tensor(img, g.dtype)
    prob = predict(g, x)[0, 0]
    pred = binarize(prob, args.threshold)
    out = _outdir(args.out)
    stem = Path(args.image).stem
    write_image(out / f"{stem}_prob.pgm", from_probability(prob, 8))
    write_mask(out / f"{stem}_mask.pgm", pred)
    write_ppm(out / f"{stem}_overlay.ppm", overlay_render(img, None, pred))
    write_resolved(out, "infer", model=mc.to_dict(), infer={
        "checkpoint": str(Path(args.checkpoint).resolve()), "image": str(Path(args.image).resolve()),
        "center": list(args.center) if args.center else None, "threshold": args.threshold})
    print(f"foreground pixels {int(pred.sum())} of {pred.size}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    ev = _override(_section(cfg, "eval", EVAL_DEFAULTS), args,
                   {"tau": "tau", "min_area": "min_area", "threshold": "threshold"})
    data = _override(_section(cfg, "data", {**DATA_DEFAULTS, "split": "all"}), args,
                     {"view": "view", "abn_type": "abn_type", "split": "split"})
    mc, g = _load_model(args.checkpoint)
    manifest = Path(args.manifest).resolve()
    ds = _select(load_manifest(manifest, data["view"], data["abn_type"]), data["split"])
    arrays = load_arrays(ds, mc.input_size, 0, 0, g.dtype)
    probs = predict(g, arrays.inputs)
    rep = evaluate(g, arrays, ev["tau"], ev["threshold"], ev["min_area"], probs=probs)
    out = _outdir(args.out)
    rep.write_csv(out / "eval.csv")
    rep.write_summary(out / "summary.txt")
    if not args.no_overlays:
        odir = _outdir(out / "overlays")
        for i, sid in enumerate(arrays.ids):
            img = from_probability(arrays.inputs[i, 0], 8)
            write_ppm(odir / f"{sid}_overlay.ppm",
                      overlay_render(img, arrays.targets[i, 0].astype(np.uint8), binarize(probs[i, 0], ev["threshold"])))
    write_resolved(out, "eval", model=mc.to_dict(), eval=ev,
                   data={**data, "manifest": str(manifest), "checkpoint": str(Path(args.checkpoint).resolve())})
    print(rep.summary())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    mc = model_config(cfg, args, base=TOY_MODEL)
    if mc.precision != "double":
        raise CliError("gradcheck needs double precision")
    g = build_model(mc, seed=args.seed)
    randomize_biases(g, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    s = mc.input_size
    x = rng.random((1, 1, s, s))
    y = (rng.random((1, 1, s, s)) < 0.3).astype(np.float64)
    rep = grad_check(g, x, y, tol=args.tol)
    print(rep.to_text())
    return 0 if rep.passed else 1


# parser

def _center(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, help="cap numeric worker threads (1 = bit-exact runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", required=True)
    data.add_argument("--config")
    data.add_argument("--view", choices=("CC", "MLO"))
    data.add_argument("--abn-type", dest="abn_type", choices=("calc", "mass"))

    p = argparse.ArgumentParser(prog="onet", description="O-net mammogram segmentation toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("preprocess", parents=[common, data], help="ROI crop, marker removal, equalization")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("augment", parents=[common, data], help="seeded rotated pseudo-samples")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("shapes", parents=[common], help="layer shapes and reference-table conformance")
    sp.add_argument("--config")
    sp.add_argument("--arch", choices=("onet", "unet"))
    sp.add_argument("--precision", choices=("double", "single"))
    sp.add_argument("--verify-table1", action="store_true")
    sp.set_defaults(func=cmd_shapes)

    sp = sub.add_parser("train", parents=[common, data], help="train a network")
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--max-steps", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--stop-delta", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--augment", type=int, help="rotated copies per sample")
    sp.add_argument("--arch", choices=("onet", "unet"))
    sp.add_argument("--precision", choices=("double", "single"))
    sp.add_argument("--split", choices=("train", "test", "all"))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", parents=[common], help="segment one image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--center", type=_center, help="ROI centre X,Y for full-size images")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", parents=[common, data], help="score a checkpoint on a manifest")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--min-area", type=int)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--split", choices=("train", "test", "all"))
    sp.add_argument("--no-overlays", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    sp.add_argument("--config")
    sp.add_argument("--arch", choices=("onet", "unet"))
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck, precision=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except (CliError, ValueError, OSError, KeyError, TypeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"onet {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
