"""Command-line front end: ``nactcn <subcommand> [options]``.

Every subcommand prints a human-readable report followed by the same report
as JSON; ``--out`` additionally writes the JSON (and any checkpoint) to disk.
Options given on the command line override the ``--config`` file.

Exit codes: 0 success, 1 other error, 2 configuration error, 3 malformed or
leaking input files, 4 numeric failure (divergence, gradient check above
tolerance).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..blocks import NacTcnConfig, NacTcnModel, load_checkpoint
from ..errors import ConfigError, LeakageError, NacTcnError, NumericError, ParseError
from ..numcore import Rng, Tensor, finite_diff_check
from ..profiler import profile
from .datasets import FeatureDataset, write_feature_dataset
from .probe import probe_causality
from .training import (ExperimentConfig, ccc_loss, evaluate, load_config, make_datasets,
                       model_config_for, sweep_heads, train)


def _experiment(args) -> ExperimentConfig:
    data = load_config(args.config).to_dict() if getattr(args, "config", None) else {}
    for key in ("task", "seed", "epochs", "precision", "data_path"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    model = dict(data.get("model", {}))
    if getattr(args, "variant", None) is not None:
        model["variant"] = args.variant
    if getattr(args, "heads", None) is not None and not isinstance(args.heads, list):
        model["heads"] = args.heads
    data["model"] = model
    return ExperimentConfig.from_dict(data)


def _emit(text: str, payload: dict, out: str | None = None, filename: str = "report.json") -> None:
    body = json.dumps(payload, indent=2)
    print(text)
    print(body)
    if out:
        path = Path(out)
        if path.suffix != ".json":
            path = path / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body)


# subcommands --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _experiment(args)
    if cfg.task == "file_dataset":
        raise ConfigError("gen-data writes synthetic tasks; pick copy_memory, adding or lagged_affect")
    if not args.out:
        raise ConfigError("gen-data needs --out DIR")
    train_ds, eval_ds = make_datasets(cfg)
    manifest = write_feature_dataset(FeatureDataset.from_splits(train_ds, eval_ds), args.out)
    payload = {"task": cfg.task, "manifest": str(manifest), "label_type": train_ds.kind,
               "input_channels": train_ds.channels, "length": train_ds.length,
               "train": len(train_ds), "eval": len(eval_ds)}
    print(f"wrote {len(train_ds)} train + {len(eval_ds)} eval sequences to {manifest}")
    print(json.dumps(payload, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _experiment(args)
    log = None if args.quiet else (lambda s: print(s, file=sys.stderr))
    report, _ = train(cfg, args.out, log=log)
    print(report.to_text())
    print(report.to_json())
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _experiment(args)
    _, eval_ds = make_datasets(cfg)
    metrics = evaluate(model, eval_ds)
    text = "\n".join(f"{k}: {v:.6f}" for k, v in metrics.items())
    _emit(text, {"checkpoint": args.checkpoint, "task": cfg.task, "metrics": metrics},
          args.out, "eval.json")
    return 0


def _model_for_profile(args) -> NacTcnModel:
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if "input_channels" in raw:
        return NacTcnModel.build(NacTcnConfig.from_dict(raw), Rng(0))
    cfg = _experiment(args)
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "train_count": 1, "eval_count": 1})
    train_ds, _ = make_datasets(cfg)
    return NacTcnModel.build(model_config_for(cfg, train_ds), Rng(0))


def cmd_profile(args) -> int:
    model = _model_for_profile(args)
    report = profile(model, args.seq_len, args.batch)
    _emit(report.to_text(), report.to_dict(), args.out, "profile.json")
    return 0


def cmd_probe(args) -> int:
    causal = not args.acausal
    config = NacTcnConfig(input_channels=args.input_channels, channels=[args.width] * args.depth,
                          kernel=args.kernel, heads=args.heads, variant=args.variant, causal=causal)
    model = NacTcnModel.build(config, Rng(args.seed))
    leak = probe_causality(model, args.seq_len, args.trials, Rng(args.seed).child(1))
    payload = {"variant": args.variant, "causal": causal, "depth": args.depth,
               "seq_len": args.seq_len, "trials": args.trials, "max_leakage": leak}
    _emit(f"{leak!r}", payload, args.out, "probe.json")
    return 0


def gradient_check(seed: int = 0, eps: float = 1e-5, channels: int = 8, heads: int = 2,
                   kernel: int = 3, n: int = 12, batch: int = 2) -> float:
    """Finite-difference check of a 2-block NAC-TCN under the CCC loss."""
    rng = Rng(seed)
    config = NacTcnConfig(input_channels=3, channels=[channels, channels], kernel=kernel,
                          heads=heads, head_type="tanh_regression")
    model = NacTcnModel.build(config, rng.child(0))
    # nonzero relative biases so their gradients are exercised too
    for blk in model.blocks:
        blk.mixer.rel_bias.data[:] = rng.normal(0.0, 0.5, blk.mixer.rel_bias.shape)
    x = Tensor(rng.normal(size=(batch, 3, n)))
    y = Tensor(np.tanh(rng.normal(size=(batch, 1, n))))
    return finite_diff_check(lambda: ccc_loss(model.forward(x), y), list(model.parameters().values()), eps)


def cmd_gradcheck(args) -> int:
    err = gradient_check(args.seed, args.eps)
    ok = err < args.tol
    payload = {"max_rel_error": err, "eps": args.eps, "tolerance": args.tol, "passed": ok}
    _emit(f"max relative error {err:.3e} ({'pass' if ok else 'FAIL'} at tol {args.tol:g})",
          payload, args.out, "gradcheck.json")
    if not ok:
        raise NumericError(f"gradient check failed: {err:.3e} >= {args.tol:g}")
    return 0


def cmd_sweep_heads(args) -> int:
    cfg = _experiment(args)
    result = sweep_heads(cfg, tuple(args.heads), args.out)
    lines = [f"heads={r['heads']}  params={r['params']:,}  metric={r['final']['metric']:.6f}"
             for r in result["results"]]
    lines.append(f"best heads: {result['best_heads']}")
    _emit("\n".join(lines), result, args.out, "sweep.json")
    return 0


# parser -------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--task", choices=["copy_memory", "adding", "lagged_affect", "file_dataset"])
    p.add_argument("--data-path", dest="data_path", help="feature dataset manifest or directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", choices=["nac_tcn", "tcn", "attn_only"])
    p.add_argument("--precision", choices=["f32", "f64"])
    p.add_argument("--out", help="output directory or .json path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nactcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic task as a feature dataset")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--heads", type=int)
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task's eval split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="parameter and MAC counts")
    _common(p)
    p.add_argument("--heads", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--seq-len", type=int, default=256)
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("probe-causality", help="measure leakage from future inputs")
    p.add_argument("--variant", choices=["nac_tcn", "tcn", "attn_only"], default="nac_tcn")
    p.add_argument("--acausal", action="store_true", help="centered windows (ablation)")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--input-channels", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of a 2-block model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep-heads", help="train once per head count")
    _common(p)
    p.add_argument("--heads", type=int, nargs="+", default=[2, 4, 8])
    p.set_defaults(func=cmd_sweep_heads)
    return parser


_EXIT_CODES = ((ConfigError, 2), (ParseError, 3), (LeakageError, 3), (NumericError, 4))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NacTcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in _EXIT_CODES:
            if isinstance(exc, cls):
                return code
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
