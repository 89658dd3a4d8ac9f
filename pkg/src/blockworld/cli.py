"""Command-line surface: train, eval, predict, gen-data, grad-check.

Config files are flat ``key = value`` text ('#' starts a comment). Reports
are flat ``key: value`` text on stdout or to ``--out``. Exit codes: 0 ok,
1 user error (bad flags, bad files), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

import numpy as np

from .config import TrainConfig
from .data import DataFormatError, generate_synthetic, load_dataset, save_dataset
from .diagnostics import DEFAULT_TOLERANCE, gradient_audit
from .encoders import tokenize
from .evaluation import evaluate
from .model import forward
from .target import predict_expectation, predict_sample
from .training import load_checkpoint, save_checkpoint, train, train_ensemble
from .world import WorldState

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def parse_config_text(text: str) -> dict:
    """Flat key = value lines into typed config values."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if val.lower() in _BOOL:
            values[key] = _BOOL[val.lower()]
        elif "," in val:
            values[key] = [_scalar(v.strip()) for v in val.split(",") if v.strip()]
        else:
            values[key] = _scalar(val)
    return values


def _scalar(val: str):
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            continue
    return val


def _emit(lines, out_path):
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_gen_data(args) -> int:
    dataset = generate_synthetic(args.count, max_blocks=args.max_blocks,
                                 rng=np.random.default_rng(args.seed))
    save_dataset(dataset.records, args.out, block_length=args.block_length)
    sizes = {name: len(idx) for name, idx in dataset.splits.items()}
    _emit([f"records: {len(dataset.records)}",
           f"splits: train={sizes['train']} dev={sizes['dev']} test={sizes['test']}",
           f"out: {args.out}"], None)
    return EXIT_OK


def _cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())
    data_path = raw.pop("data", None)
    out_path = args.out or raw.pop("out", None)
    raw.pop("out", None)
    if data_path is None:
        raise UsageError("config must set 'data = <dataset path>'")
    if out_path is None:
        raise UsageError("give --out or set 'out = <checkpoint path>' in the config")
    config = TrainConfig.from_dict(raw)

    dataset = load_dataset(data_path, block_length=config.block_length,
                           max_blocks=config.max_blocks)
    if config.ensemble_size > 1:
        members = train_ensemble(dataset, config, quiet=args.quiet)
        paths = []
        for i, member in enumerate(members):
            path = f"{out_path}.member{i}" if len(members) > 1 else out_path
            save_checkpoint(member, path)
            paths.append(path)
        report = evaluate(members, dataset.subset("dev"))
        lines = [f"members: {len(members)}"] + [f"checkpoint: {p}" for p in paths]
    else:
        ckpt = train(dataset, config, quiet=args.quiet)
        save_checkpoint(ckpt, out_path)
        report = evaluate([ckpt], dataset.subset("dev"))
        lines = [f"checkpoint: {out_path}"]
    lines += [f"dev_{k}: {v:.6f}" for k, v in report.summary().items()]
    _emit(lines, None)
    return EXIT_OK


def _cmd_eval(args) -> int:
    checkpoints = [load_checkpoint(p) for p in args.ckpt]
    config = checkpoints[0].config
    dataset = load_dataset(args.data, block_length=args.block_length or config.block_length,
                           max_blocks=config.max_blocks)
    records = dataset.subset(args.split)
    rng = np.random.default_rng(args.seed) if args.sampled_eval else None
    report = evaluate(checkpoints, records, sampled=args.sampled_eval, rng=rng)
    lines = [f"split: {args.split}", f"examples: {len(records)}",
             f"members: {len(checkpoints)}"]
    lines += [f"{k}: {v:.6f}" for k, v in report.summary().items()]
    _emit(lines, args.out)
    return EXIT_OK


def _cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    with open(args.world, encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "world" not in payload or "board" not in payload:
        raise UsageError(f"{args.world}: expected a JSON object with 'world' and 'board'")
    scale = 1.0 / ckpt.config.block_length
    world = WorldState(np.asarray(payload["world"], dtype=np.float64) * scale,
                       np.asarray(payload["board"][0], dtype=np.float64) * scale,
                       np.asarray(payload["board"][1], dtype=np.float64) * scale,
                       max_blocks=ckpt.config.max_blocks)
    ids = tokenize(args.instruction, ckpt.vocab)
    out = forward(ckpt.params, ckpt.config, ids, world)

    lines = [f"source: {int(np.argmax(out.source_dist.values))}"]
    if args.sample:
        rng = np.random.default_rng(args.seed)
        pred = predict_sample(out.ref_dist.values, out.positions,
                              out.offset_center.values, ckpt.config.sigma_o, rng)
        lines.append(f"reference: {pred.ref_index}")
        lines.append("offset: " + " ".join(f"{v:.4f}" for v in pred.offset))
    else:
        pred = predict_expectation(out.ref_dist.values, out.positions,
                                   out.offset_center.values)
        lines.append(f"reference_argmax: {int(np.argmax(out.ref_dist.values))}")
        lines.append("offset_center: " + " ".join(f"{v:.4f}" for v in out.offset_center.values))
    lines.append("target: " + " ".join(f"{v:.4f}" for v in pred.position))
    _emit(lines, args.out)
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    results = gradient_audit(seed=args.seed, instances=args.instances)
    failed = {k: v for k, v in results.items() if v >= args.tolerance}
    lines = [f"{name}: {err:.3e} {'FAIL' if err >= args.tolerance else 'ok'}"
             for name, err in sorted(results.items())]
    lines.append(f"checked: {len(results)}  failed: {len(failed)}  tolerance: {args.tolerance:g}")
    _emit(lines, args.out)
    return EXIT_OK if not failed else EXIT_USER_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blockworld",
                     description="Block-world instruction models: train, evaluate, predict.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--max-blocks", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--block-length", type=float, default=1.0)
    p.set_defaults(run=_cmd_gen_data)

    p = sub.add_parser("train", help="train from a flat key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="checkpoint path (overrides config 'out')")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(run=_cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints (several = ensemble)")
    p.add_argument("--ckpt", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--out", default=None)
    p.add_argument("--sampled-eval", action="store_true",
                   help="draw the target instead of taking the expectation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block-length", type=float, default=None)
    p.set_defaults(run=_cmd_eval)

    p = sub.add_parser("predict", help="predict source and target for one instruction")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--world", required=True, help="JSON file with 'world' and 'board'")
    p.add_argument("--sample", action="store_true", help="sample the reference block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(run=_cmd_predict)

    p = sub.add_parser("grad-check", help="finite-difference audit of ops and model paths")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(run=_cmd_grad_check)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.run(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USER_ERROR
    except (DataFormatError, FileNotFoundError, ValueError, KeyError, IndexError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USER_ERROR
    except Exception:  # anything else is a bug in this package
        traceback.print_exc()
        return EXIT_INTERNAL_ERROR


def main() -> None:
    sys.exit(run_cli())
