"""Command-line driver.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 training or numerical divergence.  Every command takes --seed and is
deterministic given it; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataio
from .errors import (
    ConfigError,
    EnumerationCapError,
    NumericalError,
    ParseError,
    PersistenceError,
    ShapeError,
    TrainingError,
    UnsupportedOperationError,
)
from .inference import (
    CaConfig,
    InferenceNet,
    exact_marginal,
    inference_net_states_batch,
    map_states_batch,
    train_inference_net,
)
from .learning import (
    LearnTrace,
    TrainConfig,
    benchmark_learning,
    classify,
    finetune_global,
    finetune_supervised,
    pretrain_layerwise,
)
from .model import BINARY, DataBatch, ModelParams, joint_log_prob_batch
from .restoration import (
    ImageGray,
    RestorationProblem,
    block_noise,
    corrupt,
    default_beta_schedule,
    gaussian_noise,
    generate,
    psnr,
    reconstruct,
    restore_hqs,
    text_overlay,
)
from .model import ancestral_sample

MAP_METHODS = ("ca", "in", "augca", "exact")


def _echo(msg: str):
    print(msg)


def _fail(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# shared loading helpers


def _load_batch(path: str, binarize_mode: str | None, seed: int) -> DataBatch:
    tensor = dataio.read_idx(path)
    if binarize_mode in (dataio.BERNOULLI, dataio.THRESHOLD):
        return dataio.binarize(tensor, mode=binarize_mode, seed=seed)
    arr = tensor.array
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return DataBatch(arr.reshape(arr.shape[0], -1) / 255.0)


def _load_train_data(path: str, cfg: TrainConfig, extras: dict) -> DataBatch:
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".pgm"))
        if not names:
            raise ConfigError(f"{path}: no .pgm files to sample patches from")
        images = [dataio.read_pgm(os.path.join(path, n)) for n in names]
        patch = extras.get("patch") or {}
        spec = dataio.PatchSpec(int(patch.get("size", 8)), int(patch.get("count", 10000)),
                                int(patch.get("seed", cfg.seed)))
        return dataio.sample_patches(images, spec)
    if cfg.visible_kind == BINARY:
        b = extras.get("binarize") or {"mode": dataio.BERNOULLI, "seed": cfg.seed}
        return _load_batch(path, b["mode"], int(b.get("seed", cfg.seed)))
    return _load_batch(path, None, cfg.seed)


def _ca_config(args, seed: int) -> CaConfig:
    return CaConfig(max_sweeps=getattr(args, "sweeps", 50) or 50,
                    restarts=getattr(args, "restarts", 1) or 1,
                    seed=seed)


def _net_for(params: ModelParams, data: DataBatch | None, seed: int,
             epochs: int = 30) -> InferenceNet:
    """Inference net for a model: fit on the given data, else on its own samples."""
    if data is None:
        data, _ = ancestral_sample(params, rng_seed=seed, count=2000)
    return train_inference_net(params, data, epochs=epochs, lr=0.1, rng_seed=seed)


def _map_once(X, params, method, net, cfg, cap=20):
    if method == "in":
        states = inference_net_states_batch(X, net)
        return states, joint_log_prob_batch(X, states, params)
    name = {"ca": "ca", "augca": "aug_ca", "exact": "exact"}[method]
    return map_states_batch(X, params, method=name, net=net, cfg=cfg, cap=cap)


def _state_bits(states, i) -> str:
    return "|".join("".join(str(int(v)) for v in layer[i]) for layer in states)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from dataclasses import replace
    cfg, extras = dataio.load_train_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = _load_train_data(args.data, cfg, extras)
    sizes = [data.vectors.shape[1]] + extras["hidden_sizes"]
    params = pretrain_layerwise(data, sizes, cfg)
    trace = LearnTrace()
    if extras["finetune_epochs"] > 0:
        ft = replace(cfg, epochs=extras["finetune_epochs"])
        params, trace = finetune_global(params, data, ft)
    dataio.save_model(args.out, params)
    if args.trace:
        dataio.write_trace_csv(args.trace, trace)
    _echo(f"trained {'-'.join(str(s) for s in sizes)} model on {len(data)} samples -> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg, extras = dataio.load_train_config(args.config)
    from dataclasses import replace
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    params = dataio.load_model(args.model)
    b = extras.get("binarize") or {"mode": dataio.BERNOULLI, "seed": cfg.seed}
    data = _load_batch(args.data, b["mode"] if params.visible_kind == BINARY else None,
                       int(b.get("seed", cfg.seed)))
    labels = dataio.read_idx(args.labels).array.reshape(-1).astype(int)
    data = DataBatch(data.vectors, labels=labels)
    params, trace = finetune_supervised(params, data, cfg)
    dataio.save_model(args.out, params)
    if args.trace:
        dataio.write_trace_csv(args.trace, trace)
    _echo(f"supervised fine-tuning done; final label objective {trace.objective[-1]:.4f}"
          if len(trace) else "supervised fine-tuning done (no epochs)")
    return 0


def cmd_classify(args) -> int:
    params = dataio.load_model(args.model)
    data = _load_batch(args.data, dataio.THRESHOLD if params.visible_kind == BINARY else None,
                       args.seed or 0)
    net = _net_for(params, data, args.seed or 0) if args.map_method == "augca" else None
    cfg = _ca_config(args, args.seed or 0)
    pred = classify(params, data.vectors, net=net, cfg=cfg)
    rows = [{"sample": i, "label": int(p)} for i, p in enumerate(pred)]
    dataio.write_rows_csv(args.out, rows, ["sample", "label"])
    msg = f"classified {len(pred)} samples -> {args.out}"
    if args.labels:
        truth = dataio.read_idx(args.labels).array.reshape(-1).astype(int)
        msg += f" accuracy={float((pred == truth).mean()):.4f}"
    _echo(msg)
    return 0


def cmd_infer(args) -> int:
    params = dataio.load_model(args.model)
    data = _load_batch(args.data, dataio.THRESHOLD if params.visible_kind == BINARY else None,
                       args.seed or 0)
    cfg = _ca_config(args, args.seed or 0)
    net = None
    if args.map_method in ("in", "augca"):
        net = _net_for(params, data, args.seed or 0)
    states, lj = _map_once(data.vectors, params, args.map_method, net, cfg)
    rows = [{"sample": i, "joint_log_prob": float(lj[i]),
             "map_method": args.map_method, "state": _state_bits(states, i)}
            for i in range(len(lj))]
    dataio.write_rows_csv(args.out, rows, ["sample", "joint_log_prob", "map_method", "state"])
    _echo(f"map inference ({args.map_method}) on {len(lj)} samples, "
          f"mean joint log prob {float(lj.mean()):.4f} -> {args.out}")
    return 0


def cmd_loglik(args) -> int:
    params = dataio.load_model(args.model)
    data = _load_batch(args.data, dataio.THRESHOLD if params.visible_kind == BINARY else None,
                       args.seed or 0)
    cfg = _ca_config(args, args.seed or 0)
    if args.map_method == "exact":
        vals = np.array([exact_marginal(x, params) for x in data.vectors])
    else:
        net = _net_for(params, data, args.seed or 0) if args.map_method in ("in", "augca") else None
        _, vals = _map_once(data.vectors, params, args.map_method, net, cfg)
    rows = [{"sample": i, "log_likelihood": float(v)} for i, v in enumerate(vals)]
    dataio.write_rows_csv(args.out, rows, ["sample", "log_likelihood"])
    _echo(f"log likelihood ({args.map_method}) mean {float(np.mean(vals)):.4f} -> {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    methods = [m for m in args.methods.split(",") if m]
    if not methods:
        raise ConfigError("no methods requested")
    sizes = [int(s) for s in args.hidden_sizes.split(",") if s]
    if not sizes:
        raise ConfigError("no hidden sizes requested")
    seeds = [int(s) for s in args.seeds.split(",") if s]
    data = _load_batch(args.data, dataio.BERNOULLI, args.seed or 0)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                      seed=args.seed or 0, e_step="aug_ca",
                      ca_cfg=CaConfig(restarts=args.restarts or 2))
    rows = benchmark_learning(data, sizes, methods, cfg, seeds)
    dataio.write_rows_csv(args.out, rows,
                          ["n_h", "method", "evaluator", "mean_log_likelihood", "seeds"])
    _echo(f"benchmark over n_h={sizes} methods={methods} -> {args.out}")
    return 0


def _parse_noise(spec: str):
    parts = spec.split(":")
    kind = parts[0]
    if kind == "gaussian" and len(parts) == 3:
        return gaussian_noise(float(parts[1]), float(parts[2]))
    if kind == "block" and len(parts) == 3:
        return block_noise(int(parts[1]), float(parts[2]))
    if kind == "text" and len(parts) == 2:
        mask = dataio.read_pgm(parts[1]).pixels > 0.5
        return text_overlay(mask)
    raise ConfigError(f"bad noise spec {spec!r}; use gaussian:SIGMA:FRACTION"
                      " | block:SIZE:SIGMA | text:MASK.pgm")


def cmd_corrupt(args) -> int:
    image = dataio.read_pgm(args.data)
    noise = _parse_noise(args.noise)
    out, mask = corrupt(image, noise, seed=args.seed or 0)
    dataio.write_pgm(args.out, out)
    if args.mask_out:
        dataio.write_pgm(args.mask_out, ImageGray(mask.astype(float)))
    _echo(f"corrupted {args.data} with {args.noise}: {int(mask.sum())} pixels -> {args.out}")
    return 0


def cmd_restore(args) -> int:
    prior = dataio.load_model(args.model)
    corrupted = dataio.read_pgm(args.data)
    noise = _parse_noise(args.noise)
    if args.beta_schedule:
        schedule = [float(b) for b in args.beta_schedule.split(",") if b]
    else:
        sigma = noise.sigma if noise.sigma > 0 else 0.25
        schedule = default_beta_schedule(sigma)
    problem = RestorationProblem(corrupted, noise, lam=args.lam,
                                 patch_size=args.patch_size, stride=1,
                                 beta_schedule=schedule)
    net = _net_for(prior, None, args.seed or 0) if args.map_method == "augca" else None
    cfg = _ca_config(args, args.seed or 0)
    clean = dataio.read_pgm(args.clean) if args.clean else None
    restored, log = restore_hqs(problem, prior, net=net, cfg=cfg,
                                map_method="aug_ca" if args.map_method == "augca" else "ca",
                                clean=clean)
    dataio.write_pgm(args.out, restored)
    if args.log:
        cols = ["beta", "objective"] + (["psnr"] if clean is not None else [])
        dataio.write_rows_csv(args.log, log, cols)
    msg = f"restored {args.data} -> {args.out}"
    if clean is not None:
        msg += f" psnr={psnr(restored, clean):.2f}dB (was {psnr(corrupted, clean):.2f}dB)"
    _echo(msg)
    return 0


def cmd_reconstruct(args) -> int:
    params = dataio.load_model(args.model)
    image = dataio.read_pgm(args.data)
    if image.height * image.width != params.n_visible:
        raise ShapeError("model width does not match the image")
    net = _net_for(params, None, args.seed or 0) if args.map_method == "augca" else None
    cfg = _ca_config(args, args.seed or 0)
    recon, _, lj = reconstruct(image.pixels.reshape(-1), params, net=net, cfg=cfg,
                               map_method="aug_ca" if args.map_method == "augca" else "ca")
    dataio.write_pgm(args.out, ImageGray(recon.reshape(image.pixels.shape)))
    _echo(f"reconstructed {args.data} (joint log prob {float(lj[0]):.4f}) -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    params = dataio.load_model(args.model)
    h, w = (int(v) for v in args.shape.lower().split("x"))
    images = generate(params, seed=args.seed or 0, count=args.count, shape=(h, w))
    paths = []
    for i, img in enumerate(images):
        path = f"{args.out}_{i:03d}.pgm" if args.count > 1 else f"{args.out}.pgm" \
            if not args.out.endswith(".pgm") else args.out
        dataio.write_pgm(path, img)
        paths.append(path)
    _echo(f"generated {len(images)} images -> {paths[0]}{' ...' if len(paths) > 1 else ''}")
    return 0


def cmd_psnr(args) -> int:
    a = dataio.read_pgm(args.a)
    b = dataio.read_pgm(args.b)
    print(f"{psnr(a, b):.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, *, model=False, data=False, out=False):
    if model:
        p.add_argument("--model", required=True)
    if data:
        p.add_argument("--data", required=True)
    if out:
        p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (the numeric kernels are vectorized; kept for scripting)")


def _add_map_flags(p, methods=MAP_METHODS):
    p.add_argument("--map-method", choices=methods, default="ca", dest="map_method")
    p.add_argument("--sweeps", type=int, default=50)
    p.add_argument("--restarts", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="drbn",
        description="Deep regression Bayesian networks: training, inference, restoration.")
    sub = ap.add_subparsers(dest="cmd")

    p = sub.add_parser("train", help="layerwise pre-training plus global fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", default=None, help="write the fine-tuning trace CSV here")
    _add_common(p, data=True, out=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="supervised fine-tuning with labels")
    p.add_argument("--config", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--trace", default=None)
    _add_common(p, model=True, data=True, out=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("classify", help="predict labels via MAP features")
    p.add_argument("--labels", default=None, help="optional truth labels for an accuracy line")
    _add_map_flags(p, methods=("ca", "augca"))
    _add_common(p, model=True, data=True, out=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("infer", help="MAP latent states per sample")
    _add_map_flags(p)
    _add_common(p, model=True, data=True, out=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("loglik", help="per-sample log likelihood (max form, or exact sum)")
    _add_map_flags(p)
    _add_common(p, model=True, data=True, out=True)
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("benchmark", help="matched-budget learning comparison")
    p.add_argument("--hidden-sizes", required=True, dest="hidden_sizes")
    p.add_argument("--methods", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=100, dest="batch_size")
    p.add_argument("--restarts", type=int, default=2)
    _add_common(p, data=True, out=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("corrupt", help="apply a synthetic noise model")
    p.add_argument("--noise", required=True)
    p.add_argument("--mask-out", default=None, dest="mask_out")
    _add_common(p, data=True, out=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("restore", help="patch-prior restoration by half-quadratic splitting")
    p.add_argument("--noise", required=True)
    p.add_argument("--lambda", type=float, default=1e6, dest="lam")
    p.add_argument("--beta-schedule", default=None, dest="beta_schedule")
    p.add_argument("--patch-size", type=int, default=8, dest="patch_size")
    p.add_argument("--clean", default=None)
    p.add_argument("--log", default=None)
    _add_map_flags(p, methods=("ca", "augca"))
    _add_common(p, model=True, data=True, out=True)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("reconstruct", help="MAP latent state, then most likely image")
    _add_map_flags(p, methods=("ca", "augca"))
    _add_common(p, model=True, data=True, out=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("generate", help="ancestral samples emitted as conditional means")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--shape", required=True, help="HxW, must match the model width")
    _add_common(p, model=True, out=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("psnr", help="peak signal-to-noise ratio between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_psnr)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if getattr(args, "cmd", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        _fail("error: --threads must be at least 1")
        return 1
    try:
        return args.func(args)
    except (ConfigError, EnumerationCapError, UnsupportedOperationError) as e:
        _fail(f"error: {e}")
        return 1
    except (ParseError, PersistenceError, ShapeError, FileNotFoundError, IsADirectoryError) as e:
        _fail(f"data error: {e}")
        return 2
    except (TrainingError, NumericalError) as e:
        _fail(f"training error: {e}")
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
