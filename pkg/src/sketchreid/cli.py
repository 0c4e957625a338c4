"""Command-line entry points: synth | train | eval | transform | gradcheck."""

import os

# Thread-count control must land before numpy spins up its pools.
_threads = os.environ.get("SKETCHREID_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np

from sketchreid import checkpoint, evaluation, gradcheck_suite, spt
from sketchreid.data import (dataset_split, load_and_normalize, read_gray,
                             read_manifest, synth_generate, write_dataset,
                             write_pgm)
from sketchreid.errors import ConfigError, InputError, TrainingDiverged
from sketchreid.network import build_model, forward_features
from sketchreid.runconfig import echo_config, load_run_config
from sketchreid.trainer import train


@contextlib.contextmanager
def output_dir(path):
    """Create the directory, hold an exclusive lock file, echo nothing else."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputError(f"cannot create output directory {out}: {e}") from None
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(
            f"{lock} exists: another command is using this directory "
            f"(delete it if that run crashed)") from None
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _resolved_config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
        overrides["synth.seed"] = args.seed
        overrides["eval.seed"] = args.seed
    cfg = load_run_config(args.config, overrides)
    if getattr(args, "manifest", None):
        cfg.manifest = str(args.manifest)
    return cfg


def _split_samples(dataset, cfg):
    train_ids, test_ids = dataset_split(dataset.identities(),
                                        cfg.split.train_fraction, cfg.split.seed)
    samples = list(zip(dataset.images, dataset.metas))
    train_samples = [s for s in samples if s[1].identity in set(train_ids)]
    test_samples = [s for s in samples if s[1].identity in set(test_ids)]
    return train_ids, test_ids, train_samples, test_samples


def cmd_synth(args):
    cfg = _resolved_config(args)
    with output_dir(args.out) as out:
        dataset = synth_generate(cfg.synth)
        write_dataset(dataset, out)
        echo_config(cfg, out / "config_resolved.toml")
        print(f"wrote {len(dataset)} images under {out}")
    return 0


def _identity_class_map(train_ids):
    return {ident: k for k, ident in enumerate(sorted(train_ids))}


def _relabel(samples, class_map):
    out = []
    for img, meta in samples:
        out.append((img, type(meta)(identity=class_map[meta.identity],
                                    camera=meta.camera, variant=meta.variant,
                                    source=meta.source)))
    return out


def cmd_train(args):
    cfg = _resolved_config(args)
    if not cfg.manifest:
        raise InputError("train needs a dataset manifest (--manifest or [io] manifest)")
    dataset = read_manifest(cfg.manifest)
    train_ids, _, train_samples, _ = _split_samples(dataset, cfg)
    net_cfg = cfg.network_config(n_classes=len(train_ids))
    model = build_model(net_cfg, seed=cfg.train.seed)
    class_map = _identity_class_map(train_ids)
    with output_dir(args.out) as out:
        echo_config(cfg, out / "config_resolved.toml")
        try:
            report = train(model, _relabel(train_samples, class_map), cfg.train,
                           out_dir=out)
        except TrainingDiverged as e:
            print(f"training aborted: {e}", file=sys.stderr)
            for key, value in e.diagnostics.items():
                if key != "param_norms":
                    print(f"  {key}: {value}", file=sys.stderr)
            return 3
        checkpoint.save_model(model, out / "model.sptn")
        last = report.epochs[-1] if report.epochs else None
        if last is not None:
            print(f"trained {len(report.epochs)} epochs; "
                  f"final mean total loss {last.total:.4f}")
        print(f"checkpoint: {out / 'model.sptn'}")
    return 0


def _test_features(model, test_samples):
    feats = []
    for img, _ in test_samples:
        f, _ = forward_features(model, img)
        feats.append(f)
    return feats


def cmd_eval(args):
    cfg = _resolved_config(args)
    if not cfg.manifest:
        raise InputError("eval needs a dataset manifest (--manifest or [io] manifest)")
    model = checkpoint.load_model(args.checkpoint)
    dataset = read_manifest(cfg.manifest)
    _, test_ids, _, test_samples = _split_samples(dataset, cfg)
    if not test_ids:
        raise InputError("identity split left no test identities")
    with output_dir(args.out) as out:
        echo_config(cfg, out / "config_resolved.toml")
        feats = _test_features(model, test_samples)
        metas = [m for _, m in test_samples]
        results = {}
        curves = {}
        for name, probe_cam in (("same_clothes_AB", "B"), ("cross_clothes_AC", "C")):
            mean, trials = evaluation.repeat_eval(
                feats, metas, cfg.eval.gallery_camera, probe_cam,
                trials=cfg.eval.trials, seed=cfg.eval.seed)
            evaluation.write_cmc_csv(out / f"cmc_{name}.csv", mean, trials)
            results[name] = float(mean[0])
            curves[name] = mean
        evaluation.write_rank1(out / "rank1.txt", results)
        if cfg.eval.svg:
            evaluation.write_cmc_svg(out / "cmc.svg", curves)
        for name in sorted(results):
            print(f"{name} rank-1 {results[name]:.4f}")
    return 0


def cmd_transform(args):
    cfg = _resolved_config(args)
    if args.checkpoint:
        model = checkpoint.load_model(args.checkpoint)
        net_cfg = model.config
        if not net_cfg.with_spt:
            raise InputError("checkpoint was trained without the polar transform")
        if not 0 <= args.stream < len(model.streams):
            raise InputError(f"stream index {args.stream} outside "
                             f"0..{len(model.streams) - 1}")
        lam = model.streams[args.stream].spt_lambda
    else:
        net_cfg = cfg.network_config(n_classes=2)
        if not 0 <= args.stream < len(net_cfg.stream_ranges):
            raise InputError(f"stream index {args.stream} outside "
                             f"0..{len(net_cfg.stream_ranges) - 1}")
        lam = spt.init_lambda(net_cfg.n_angles)
    raw = read_gray(args.image)
    img = load_and_normalize(raw, net_cfg.input_side)
    a, b = net_cfg.stream_ranges[args.stream]
    theta = spt.z_to_theta(spt.lambda_to_z(lam), a, b)
    grid = spt.build_grid(theta, spt.SptConfig(
        n_angles=net_cfg.n_angles, n_radii=net_cfg.n_radii,
        max_radius=net_cfg.max_radius, angle_start=a, angle_end=b))
    transformed = spt.spt_forward(img, grid)
    with output_dir(args.out) as out:
        write_pgm(out / "transformed.pgm", np.clip(transformed, 0.0, 1.0))
        with open(out / "theta.csv", "w", encoding="utf-8") as f:
            f.write("row,theta\n")
            for k, t in enumerate(theta):
                f.write(f"{k},{float(t)!r}\n")
        print(f"wrote {out / 'transformed.pgm'} and {out / 'theta.csv'}")
    return 0


def cmd_gradcheck(args):
    results = gradcheck_suite.run_suite(scope=args.scope, seeds=args.seeds,
                                        inject_error=args.inject_error)
    failed = 0
    for r in results:
        print(r.line())
        failed += not r.passed
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sketchreid",
        description="Contour-sketch identity features: polar-transform "
                    "multistream network, synthetic benchmark, CMC evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, default=None,
                       help="TOML-subset run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        if out_required:
            p.add_argument("--out", type=Path, required=True,
                           help="output directory")

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset manifest")
    common(p)
    p.add_argument("--manifest", type=Path, default=None,
                   help="dataset manifest.csv (overrides [io] manifest)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="single-shot CMC evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("transform", help="dump one stream's transformed image")
    common(p)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="use trained angle weights (default: uniform)")
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("gradcheck", help="run the gradient-fidelity suite")
    common(p, out_required=False)
    p.add_argument("--scope", default="all",
                   choices=("all",) + gradcheck_suite.SCOPES)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--inject-error", action="store_true",
                   help="flip analytic gradient signs (suite must then fail)")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
