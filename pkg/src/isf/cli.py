"""``isf`` command-line entry point.

Every verb reads one JSON experiment config, validates it against
``CONFIG_SCHEMA`` and writes its artifacts under the config's output
directory (``$ISF_OUTPUT_ROOT`` overrides it).  Exit status is 0 on success,
2 for configuration errors and 3 for runtime failures; failures also print a
one-line JSON error object on stderr.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys

import jsonschema
import numpy as np
import torch
from PIL import Image

from . import dataset as ds
from . import editing, evaluation, metrics, trainer
from .core import build_handles
from .errors import ConfigError, ISFError
from .objectives import LossWeights

SCHEMA_VERSION = 1

_spec = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}
_nonneg = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "generator": _spec,
        "classifier": _spec,
        "embedders": {"type": "object", "additionalProperties": False,
                      "properties": {"perceptual": _spec, "identity": _spec}},
        "dataset": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_total": {"type": "integer", "minimum": 2},
                           "split_fraction": {"type": "number", "exclusiveMinimum": 0,
                                              "exclusiveMaximum": 1},
                           "seed": {"type": "integer", "minimum": 0}}},
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "total_iterations": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate_M": _nonneg, "learning_rate_D": _nonneg,
                "adam_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adam_beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adam_eps": _nonneg, "r1_gamma": _nonneg,
                "weights": {"type": "object", "additionalProperties": False,
                            "properties": {k: _nonneg for k in (
                                "lambda_rf", "lambda_cls", "lambda_cont", "lambda_nb",
                                "lambda_cyc", "lambda_ds")}},
                "ds_decay_iterations": {"type": ["integer", "null"], "minimum": 1},
                "checkpoint_every": {"type": "integer", "minimum": 0},
                "log_every": {"type": "integer", "minimum": 1},
                "noise_dim": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "f1_depth": {"type": "integer", "minimum": 1},
                "f2_depth": {"type": "integer", "minimum": 1},
                "norm": {"enum": ["layer", "row", "instance"]},
                "critic_width": {"type": "integer", "minimum": 1},
                "critic_input_resolution": {"type": ["integer", "null"], "minimum": 4},
            }},
        "metrics": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_codes": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer", "minimum": 0},
                           "ppl_epsilon": {"type": "number", "exclusiveMinimum": 0},
                           "pir_steps": {"type": "integer", "minimum": 2},
                           "pir_eps_stab": _nonneg,
                           "diversity_inputs": {"type": "integer", "minimum": 1},
                           "diversity_samples": {"type": "integer", "minimum": 2}}},
    },
}

# Reference toy experiment; the acceptance checks train from this config.
TOY_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "generator": {"kind": "toy", "seed": 7},
    "classifier": {"kind": "toy"},
    "embedders": {"perceptual": {"kind": "toy_gradient"}, "identity": {"kind": "toy_identity"}},
    "dataset": {"n_total": 4000, "split_fraction": 0.875, "seed": 0},
    "train": {"total_iterations": 3000, "batch_size": 16, "weights": {"lambda_cls": 2.0}},
    "metrics": {"n_codes": 500, "seed": 123, "diversity_inputs": 500},
}

ABLATIONS = {
    "full": {},
    "drop_nb": {"weights": {"lambda_nb": 0.0}},
    "drop_cont": {"weights": {"lambda_cont": 0.0}},
    "adain": {"norm": "instance"},
    "per_row": {"norm": "row"},
}

log = logging.getLogger("isf")


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return cfg


def output_dir(cfg):
    return os.environ.get("ISF_OUTPUT_ROOT") or cfg.get("output_dir") or "isf_out"


def train_config(cfg, **overrides):
    d = copy.deepcopy(cfg.get("train", {}))
    d.setdefault("seed", cfg.get("seed", 0))
    weights = {**d.pop("weights", {}), **overrides.pop("weights", {})}
    d.update(overrides)
    return trainer.TrainConfig.from_dict({**d, "weights": LossWeights(**weights)})


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, **obj}, fh, indent=1, sort_keys=True)


def _dataset_dir(out):
    return os.path.join(out, "dataset")


def _load_or_build_dataset(cfg, handles, out):
    path = _dataset_dir(out)
    if os.path.exists(os.path.join(path, ds.MANIFEST)):
        return ds.load(path)
    return cmd_build_dataset(cfg, handles)


def _checkpoint(cfg, out, path=None):
    return trainer.load_checkpoint(path or os.path.join(out, "train", "checkpoint_final"))


def _to_uint8(images):
    return ((images.clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8).numpy()


def _save_strip(path, images):
    strip = np.concatenate(list(_to_uint8(images)), axis=1)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    Image.fromarray(strip).save(path)


def cmd_build_dataset(cfg, handles=None):
    handles = handles or build_handles(cfg)
    out = output_dir(cfg)
    spec = {"n_total": 4000, "split_fraction": 0.875, "seed": cfg.get("seed", 0),
            **cfg.get("dataset", {})}
    data = ds.build(handles.generator, handles.classifier, spec["n_total"],
                    spec["split_fraction"], spec["seed"])
    data.provenance["schema_version"] = SCHEMA_VERSION
    ds.save(data, _dataset_dir(out))
    log.info("wrote %d codes to %s", len(data), _dataset_dir(out))
    return data


def cmd_train(cfg, handles=None, overrides=None, out=None):
    handles = handles or build_handles(cfg)
    out = out or output_dir(cfg)
    data = _load_or_build_dataset(cfg, handles, output_dir(cfg))
    tcfg = train_config(cfg, **(overrides or {}))
    train_dir = os.path.join(out, "train")
    _write_json(os.path.join(train_dir, "config.json"), {"experiment": cfg, "train": tcfg.as_dict()})
    return trainer.Trainer(tcfg, handles, data, out_dir=train_dir).run()


def _mapper_for(cfg, handles, out, checkpoint):
    ckpt = _checkpoint(cfg, out, checkpoint)
    if ckpt.generator_digest != handles.generator.digest():
        raise ISFError("checkpoint was trained against a different generator")
    return trainer.mapper_from_checkpoint(ckpt)


def _test_code(cfg, handles, out, index):
    codes, labels = _load_or_build_dataset(cfg, handles, out).split("test")
    if not 0 <= index < len(codes):
        raise ConfigError(f"code index {index} outside the {len(codes)} held-out codes")
    return codes[index], labels[index]


def cmd_edit(cfg, code_index, targets, count, checkpoint=None):
    handles = build_handles(cfg)
    out = output_dir(cfg)
    mapper = _mapper_for(cfg, handles, out, checkpoint)
    w, d0 = _test_code(cfg, handles, out, code_index)
    d = torch.tensor(targets, dtype=torch.float32)
    if d.shape != d0.shape:
        raise ConfigError(f"expected {d0.numel()} target bits, got {d.numel()}")
    rng = torch.Generator().manual_seed(cfg.get("seed", 0))
    with torch.no_grad():
        codes, zs = editing.sample_modes(w, d, count, mapper, rng)
        images = handles.generator(torch.cat([w[None], codes]))
        probs = handles.classifier(images)
    stem = os.path.join(out, "edits", f"code{code_index}_{''.join(str(int(t)) for t in targets)}")
    _save_strip(stem + ".png", images)
    _write_json(stem + ".json", {
        "code_index": code_index, "targets": targets, "count": count,
        "source_probs": probs[0].tolist(), "edit_probs": probs[1:].tolist(),
        "noise": zs.tolist(), "columns": ["source"] + [f"mode{i}" for i in range(count)]})
    return stem


def cmd_interpolate(cfg, code_index, attribute, steps, checkpoint=None):
    handles = build_handles(cfg)
    out = output_dir(cfg)
    mapper = _mapper_for(cfg, handles, out, checkpoint)
    w, d0 = _test_code(cfg, handles, out, code_index)
    if not 0 <= attribute < d0.numel():
        raise ConfigError(f"attribute {attribute} outside 0..{d0.numel() - 1}")
    rng = torch.Generator().manual_seed(cfg.get("seed", 0))
    w_star, _ = editing.manipulate(w, editing.flip_targets(d0, attribute), mapper, rng=rng)
    path = editing.build_path(w, w_star.detach(), steps, attribute)
    with torch.no_grad():
        images = handles.generator(path.codes)
        probs = handles.classifier(images)
        value = metrics.pir(path, handles.generator, handles.perceptual)
    stem = os.path.join(out, "interpolations", f"code{code_index}_attr{attribute}_T{steps}")
    _save_strip(stem + ".png", images)
    _write_json(stem + ".json", {"code_index": code_index, "attribute": attribute, "T": steps,
                                 "pir": value, "probs": probs.tolist()})
    return value


def cmd_evaluate(cfg, checkpoint=None, pir_csv=None, handles=None, out=None, report_path=None):
    handles = handles or build_handles(cfg)
    root = output_dir(cfg)
    out = out or root
    mapper = _mapper_for(cfg, handles, out, checkpoint)
    codes, labels = _load_or_build_dataset(cfg, handles, root).split("test")
    protocol = evaluation.Protocol.from_dict(cfg.get("metrics", {}))
    rows = [] if pir_csv else None
    report = evaluation.evaluate(handles, mapper, codes, labels, protocol, pir_rows=rows)
    report.metadata["schema_version"] = SCHEMA_VERSION
    report.to_json(report_path or os.path.join(out, "metrics.json"))
    if pir_csv:
        with open(pir_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["code_index", "attribute", "pir"])
            writer.writerows(rows)
    return report


def parse_ablation(names, lambda_ds):
    variants = {}
    for name in names:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; known: {sorted(ABLATIONS)}")
        variants[name] = ABLATIONS[name]
    for lam in lambda_ds:
        if lam < 0:
            raise ConfigError("lambda_ds values must be >= 0")
        variants[f"lambda_ds={lam:g}"] = {"weights": {"lambda_ds": lam}}
    if not variants:
        raise ConfigError("ablation names no variants")
    return variants


def cmd_ablate(cfg, names, lambda_ds=()):
    variants = parse_ablation(names, lambda_ds)
    handles = build_handles(cfg)
    out = output_dir(cfg)
    _load_or_build_dataset(cfg, handles, out)
    rows = []
    for name, change in variants.items():
        vdir = os.path.join(out, "ablation", name.replace("=", "_"))
        cmd_train(cfg, handles, copy.deepcopy(change), out=vdir)
        rep = cmd_evaluate(cfg, handles=handles, out=vdir)
        rows.append({"variant": name, **{k: rep[k] for k in ("frechet", "diversity", "frs", "pir")}})
    path = os.path.join(out, "ablation", "ablation.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["variant", "frechet", "diversity", "frs", "pir"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


def _bits(text):
    try:
        bits = [int(c) for c in text.replace(",", "")]
    except ValueError:
        raise ConfigError(f"targets must be a bit string, got {text!r}") from None
    if any(b not in (0, 1) for b in bits):
        raise ConfigError(f"targets must be a bit string, got {text!r}")
    return bits


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def build_parser():
    p = argparse.ArgumentParser(prog="isf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", required=True)
        return s

    verb("build-dataset", "sample latent codes and label them")
    verb("train", "train the latent editor")
    s = verb("edit", "edit one held-out code into several modes")
    s.add_argument("--code-index", type=int, default=0)
    s.add_argument("--targets", required=True, help="target bits, e.g. 1011")
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--checkpoint")
    s = verb("interpolate", "interpolate from a code to its single-attribute edit")
    s.add_argument("--code-index", type=int, default=0)
    s.add_argument("--attribute", type=int, default=0)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--checkpoint")
    s = verb("evaluate", "compute the metric report for a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--pir-csv")
    s = verb("ablate", "train and evaluate ablation variants")
    s.add_argument("--variants", default="full", help=f"comma list of {sorted(ABLATIONS)}")
    s.add_argument("--lambda-ds", default="", help="comma list of lambda_ds values")
    return p


def _dispatch(args, cfg):
    if args.verb == "build-dataset":
        cmd_build_dataset(cfg)
    elif args.verb == "train":
        cmd_train(cfg)
    elif args.verb == "edit":
        if args.count < 1:
            raise ConfigError("--count must be >= 1")
        print(cmd_edit(cfg, args.code_index, _bits(args.targets), args.count, args.checkpoint))
    elif args.verb == "interpolate":
        if args.steps < 2:
            raise ConfigError("--steps must be >= 2")
        print(json.dumps({"pir": cmd_interpolate(cfg, args.code_index, args.attribute,
                                                 args.steps, args.checkpoint)}))
    elif args.verb == "evaluate":
        print(json.dumps(cmd_evaluate(cfg, args.checkpoint, args.pir_csv).values, sort_keys=True))
    elif args.verb == "ablate":
        try:
            lams = _floats(args.lambda_ds)
        except ValueError:
            raise ConfigError(f"bad --lambda-ds list {args.lambda_ds!r}") from None
        names = [n for n in args.variants.split(",") if n]
        for row in cmd_ablate(cfg, names, lams):
            print(json.dumps(row))


def _fail(code, kind, exc):
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc),
                      "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.verb == "ablate":
            parse_ablation([n for n in args.variants.split(",") if n], _floats(args.lambda_ds))
    except (ConfigError, ValueError) as exc:
        return _fail(2, "config", exc)
    try:
        _dispatch(args, cfg)
    except ConfigError as exc:
        return _fail(2, "config", exc)
    except (ISFError, OSError) as exc:
        return _fail(3, "runtime", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
