"""Command-line interface.

Sub-commands: train, upsample, eval, sample-mesh, gradcheck, ablation.
Every command writes a RunManifest (JSON with input digests, config
snapshot, seed, tool version, output paths) next to its outputs.

Exit codes: 0 success, 2 input error, 3 config error, 4 numerical failure.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import fields

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .cloud_io import read_point_cloud, write_point_cloud
from .errors import ConfigError, DivergenceError, NumericalError, ParseError
from .geometry import AugmentParams
from .gradcheck import TOLERANCE, run_scope
from .losses import LossWeights
from .mesh import parse_mesh, sample_mesh_uniform
from .metrics import evaluate_cloud, write_reports_csv
from .network import GeneratorParams
from .training import TrainConfig, run_ablation, self_train, upsample

MESH_EXTENSIONS = (".obj", ".off")

_CONFIG_CASTS = {
    "epochs": int, "batch_size": int, "num_pairs": int, "ratio": int,
    "seed": int, "neighbors": int, "channels": int,
    "repulsion_neighbors": int, "uniform_neighbors": int,
    "lr_generator": float, "lr_discriminator": float,
    "repulsion_radius": float,
    "kernel": str, "reconstruction": str,
}
_CONFIG_BOOLS = ("use_discriminator", "use_self_attention", "progressive",
                 "use_uniform_loss", "use_repulsion_loss")
_WEIGHT_KEYS = {f"weight_{f.name}": f.name for f in fields(LossWeights)}
_AUGMENT_KEYS = {
    "augment_rotation": ("rotation", str),
    "augment_jitter": ("jitter_sigma", float),
    "augment_shift": ("shift_range", float),
    "augment_scale_low": ("scale_low", float),
    "augment_scale_high": ("scale_high", float),
}
_EXTRA_KEYS = {"mesh_sample_count": int, "mesh_sample_mode": str}


def _parse_bool(field, raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(field, f"expected a boolean, got {raw!r}")


def read_config_file(path):
    """Parse a flat ``key = value`` config file into a raw dict."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError(path, lineno, f"expected key = value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ParseError(path, 0, str(exc)) from None
    return values


def build_train_config(raw):
    """Turn raw string values into a validated TrainConfig (+ extras)."""
    kwargs = {}
    weights = {}
    augment = {}
    extras = {"mesh_sample_count": 4096, "mesh_sample_mode": "poisson"}
    for key, raw_value in raw.items():
        try:
            if key in _CONFIG_CASTS:
                kwargs[key] = _CONFIG_CASTS[key](raw_value) \
                    if isinstance(raw_value, str) else raw_value
            elif key in _CONFIG_BOOLS:
                kwargs[key] = _parse_bool(key, raw_value) \
                    if isinstance(raw_value, str) else bool(raw_value)
            elif key in _WEIGHT_KEYS:
                weights[_WEIGHT_KEYS[key]] = float(raw_value)
            elif key in _AUGMENT_KEYS:
                name, cast = _AUGMENT_KEYS[key]
                augment[name] = cast(raw_value)
            elif key == "uniform_fractions":
                parts = raw_value.split(",") if isinstance(raw_value, str) \
                    else raw_value
                kwargs[key] = tuple(float(p) for p in parts)
            elif key in _EXTRA_KEYS:
                extras[key] = _EXTRA_KEYS[key](raw_value)
            else:
                raise ConfigError(key, "unknown configuration field")
        except ConfigError:
            raise
        except (ValueError, TypeError):
            raise ConfigError(key, f"bad value {raw_value!r}") from None
    if weights:
        kwargs["weights"] = LossWeights(**weights)
    if augment:
        kwargs["augment"] = AugmentParams(**augment)
    config = TrainConfig(**kwargs)
    config.validate()
    return config, extras


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(path, command, inputs, config, seed, outputs):
    manifest = {
        "tool": "pointup",
        "version": __version__,
        "command": command,
        "seed": seed,
        "inputs": inputs,
        "config": config,
        "outputs": [str(p) for p in outputs],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _load_cloud_or_sample(path, extras, seed):
    """A cloud file loads directly; a mesh is surface-sampled per config."""
    lowered = str(path).lower()
    if lowered.endswith(MESH_EXTENSIONS):
        mesh = parse_mesh(path)
        return sample_mesh_uniform(mesh, extras["mesh_sample_count"], seed,
                                   mode=extras["mesh_sample_mode"])
    if lowered.endswith(".ply"):
        try:
            mesh = parse_mesh(path)
        except ParseError:
            return read_point_cloud(path)
        return sample_mesh_uniform(mesh, extras["mesh_sample_count"], seed,
                                   mode=extras["mesh_sample_mode"])
    return read_point_cloud(path)


def _reference_for_eval(path, samples, seed):
    """Returns (reference cloud, mesh or None) for the eval command."""
    lowered = str(path).lower()
    if lowered.endswith(MESH_EXTENSIONS):
        mesh = parse_mesh(path)
        return sample_mesh_uniform(mesh, samples, seed, mode="poisson"), mesh
    if lowered.endswith(".ply"):
        try:
            mesh = parse_mesh(path)
        except ParseError:
            return read_point_cloud(path), None
        return sample_mesh_uniform(mesh, samples, seed, mode="poisson"), mesh
    return read_point_cloud(path), None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    raw = read_config_file(args.config) if args.config else {}
    for key, value in (("ratio", args.ratio), ("seed", args.seed),
                       ("kernel", args.kernel), ("num_pairs", args.pairs),
                       ("epochs", args.epochs),
                       ("reconstruction", args.reconstruction)):
        if value is not None:
            raw[key] = value
    if args.no_discriminator:
        raw["use_discriminator"] = False
    config, extras = build_train_config(raw)

    inputs = {str(args.input): _sha256(args.input)}
    cloud = _load_cloud_or_sample(args.input, extras, config.seed)

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "generator.ckpt")
    disc_path = os.path.join(args.out, "discriminator.ckpt")
    log_path = os.path.join(args.out, "train_log.txt")
    manifest_path = os.path.join(args.out, "manifest.json")

    def persist(result, outputs):
        save_checkpoint(ckpt_path, dict(result.generator.named_parameters()),
                        metadata=result.generator.metadata())
        outputs.append(ckpt_path)
        if result.discriminator is not None:
            save_checkpoint(disc_path,
                            dict(result.discriminator.named_parameters()),
                            metadata=result.discriminator.metadata())
            outputs.append(disc_path)
        with open(log_path, "w", encoding="utf-8") as fh:
            for line in result.log.lines():
                fh.write(line + "\n")
        outputs.append(log_path)

    outputs = []
    try:
        result = self_train(cloud, config)
    except DivergenceError as exc:
        diag_path = os.path.join(args.out, "divergence.txt")
        if exc.last_good is not None:
            persist(exc.last_good, outputs)
        with open(diag_path, "w", encoding="utf-8") as fh:
            fh.write(str(exc) + "\n")
        outputs.append(diag_path)
        write_manifest(manifest_path, "train", inputs, config.to_dict(),
                       config.seed, outputs)
        print(f"error: {exc}", file=sys.stderr)
        return 4

    persist(result, outputs)
    write_manifest(manifest_path, "train", inputs, config.to_dict(),
                   config.seed, outputs)
    print(f"trained {config.epochs} epochs; wrote {ckpt_path}")
    return 0


def cmd_upsample(args):
    inputs = {str(args.input): _sha256(args.input),
              str(args.checkpoint): _sha256(args.checkpoint)}
    cloud = read_point_cloud(args.input)
    tensors, metadata, _ = load_checkpoint(args.checkpoint)
    generator = GeneratorParams.from_checkpoint(tensors, metadata)
    result = upsample(cloud, generator, ratio=args.ratio)
    write_point_cloud(args.out, result.points)
    write_manifest(f"{args.out}.manifest.json", "upsample", inputs,
                   {"ratio": generator.ratio}, None, [args.out])
    print(f"wrote {len(result)} points to {args.out}")
    return 0


def cmd_eval(args):
    inputs = {str(args.generated): _sha256(args.generated),
              str(args.reference): _sha256(args.reference)}
    generated = read_point_cloud(args.generated)
    reference, mesh = _reference_for_eval(args.reference, args.reference_samples,
                                          args.seed or 0)
    name = args.name or os.path.basename(str(args.generated))
    report = evaluate_cloud(generated.points, reference=reference.points,
                            mesh=mesh, name=name,
                            metadata={"seed": args.seed or 0})
    write_reports_csv(args.out, [report])
    write_manifest(f"{args.out}.manifest.json", "eval", inputs, {},
                   args.seed or 0, [args.out])
    print(report.to_kv_text(), end="")
    return 0


def cmd_sample_mesh(args):
    inputs = {str(args.input): _sha256(args.input)}
    mesh = parse_mesh(args.input)
    cloud = sample_mesh_uniform(mesh, args.count, args.seed, mode=args.mode)
    write_point_cloud(args.out, cloud.points)
    write_manifest(f"{args.out}.manifest.json", "sample-mesh", inputs,
                   {"count": args.count, "mode": args.mode}, args.seed,
                   [args.out])
    print(f"sampled {len(cloud)} points from {args.input}")
    return 0


def cmd_gradcheck(args):
    scopes = [args.scope] if args.scope != "all" else ["ops", "losses", "end2end"]
    failed = False
    for scope in scopes:
        report, worst = run_scope(scope, instances=args.instances)
        for name, err in sorted(report.items()):
            status = "ok" if err < TOLERANCE else "FAIL"
            print(f"{scope:8s} {name:12s} max_rel_err={err:.3e} {status}")
        failed = failed or worst >= TOLERANCE
    return 4 if failed else 0


def cmd_ablation(args):
    raw = read_config_file(args.config) if args.config else {}
    if args.epochs is not None:
        raw["epochs"] = args.epochs
    if args.seed is not None:
        raw["seed"] = args.seed
    config, extras = build_train_config(raw)
    inputs = {str(args.input): _sha256(args.input),
              str(args.reference): _sha256(args.reference)}
    cloud = _load_cloud_or_sample(args.input, extras, config.seed)
    reference, mesh = _reference_for_eval(args.reference,
                                          args.reference_samples, config.seed)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise ConfigError("variants", "no variants given")
    rows = run_ablation(cloud, config, variants, reference=reference.points,
                        mesh=mesh)
    write_reports_csv(args.out, [row.report for row in rows])
    write_manifest(f"{args.out}.manifest.json", "ablation", inputs,
                   config.to_dict(), config.seed, [args.out])
    for row in rows:
        print(f"{row.label}: cd={row.report.cd:.6g} hd={row.report.hd:.6g}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pointup",
        description="Self-supervised point cloud upsampling toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="self-train on one cloud")
    train.add_argument("--input", required=True)
    train.add_argument("--config")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--ratio", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--kernel", choices=["random", "fps"])
    train.add_argument("--pairs", type=int, help="number of LR/HR pairs")
    train.add_argument("--epochs", type=int)
    train.add_argument("--no-discriminator", action="store_true")
    train.add_argument("--reconstruction", choices=["emd", "cd"])
    train.set_defaults(func=cmd_train)

    ups = sub.add_parser("upsample", help="apply a trained generator")
    ups.add_argument("--input", required=True)
    ups.add_argument("--checkpoint", required=True)
    ups.add_argument("--ratio", type=int)
    ups.add_argument("--out", required=True)
    ups.set_defaults(func=cmd_upsample)

    ev = sub.add_parser("eval", help="compute metrics against a reference")
    ev.add_argument("--generated", required=True)
    ev.add_argument("--reference", required=True,
                    help="reference cloud (.xyz/.ply) or mesh (.obj/.off/.ply)")
    ev.add_argument("--out", required=True, help="CSV output path")
    ev.add_argument("--name")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--reference-samples", type=int, default=16384)
    ev.set_defaults(func=cmd_eval)

    sm = sub.add_parser("sample-mesh", help="sample points from a mesh surface")
    sm.add_argument("--input", required=True)
    sm.add_argument("--count", type=int, required=True)
    sm.add_argument("--mode", choices=["uniform", "poisson"], default="uniform")
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_sample_mesh)

    gc = sub.add_parser("gradcheck", help="finite-difference verification")
    gc.add_argument("--scope", choices=["ops", "losses", "end2end", "all"],
                    default="all")
    gc.add_argument("--instances", type=int, default=100)
    gc.set_defaults(func=cmd_gradcheck)

    ab = sub.add_parser("ablation", help="train and evaluate config variants")
    ab.add_argument("--input", required=True)
    ab.add_argument("--config")
    ab.add_argument("--variants", required=True,
                    help="comma-separated variant tokens")
    ab.add_argument("--reference", required=True)
    ab.add_argument("--out", required=True, help="CSV output path")
    ab.add_argument("--epochs", type=int)
    ab.add_argument("--seed", type=int)
    ab.add_argument("--reference-samples", type=int, default=16384)
    ab.set_defaults(func=cmd_ablation)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
