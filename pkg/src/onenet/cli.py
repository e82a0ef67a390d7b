"""``onenet`` command line: analyze, check, train, infer.

Configuration is a flat ``key=value`` file (``#`` starts a comment) merged
with overrides: file < convenience flags < ``--set``. The resolved config is
printed to stderr before anything runs, so stdout stays machine-readable.

Exit codes: 0 success, 1 property failure, 2 usage / config / input error,
3 artifact integrity error (tampered archive, config-hash mismatch).
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checks, cost, data, train, weights
from .errors import FormatError, OneNetError
from .models import ModelConfig, build
from .tensor import Tensor

EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, EXIT_INTEGRITY = 0, 1, 2, 3

MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(train.TrainConfig)}
# Keys that only steer the command itself.
RUN_KEYS = {
    "input_size": "int",        # analyze: square input side
    "batch": "int",             # analyze: batch dimension
    "image_size": "int",        # train: toy image side
    "train_samples": "int",
    "eval_samples": "int",
    "data_dir": "str",          # train: PPM/PGM directory instead of toy data
    "eval_dir": "str",
}
RUN_DEFAULTS = {"input_size": 512, "batch": 1, "image_size": 64, "train_samples": 256,
                "eval_samples": 64, "data_dir": "", "eval_dir": ""}
ALL_KEYS = {**MODEL_KEYS, **TRAIN_KEYS, **RUN_KEYS}


class UsageError(Exception):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(key: str, value: str):
    kind = str(ALL_KEYS[key])
    try:
        if "bool" in kind:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def resolve(config_path: Optional[str], flags: dict[str, object],
            overrides: Sequence[str]) -> dict[str, object]:
    """Merge file, flags and ``--set`` pairs into typed values; reject unknown keys."""
    raw: dict[str, str] = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        raw.update(parse_config_text(text, config_path))
    raw.update({k: str(v) for k, v in flags.items() if v is not None})
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    unknown = sorted(set(raw) - set(ALL_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def model_config(values: dict) -> ModelConfig:
    return ModelConfig(**{k: v for k, v in values.items() if k in MODEL_KEYS})


def train_config(values: dict) -> train.TrainConfig:
    return train.TrainConfig(**{k: v for k, v in values.items() if k in TRAIN_KEYS})


def run_value(values: dict, key: str):
    return values.get(key, RUN_DEFAULTS[key])


def format_config(mcfg: ModelConfig, extra: dict) -> str:
    lines = ["# resolved config"] + mcfg.canonical_text().splitlines()
    lines += [f"{k}={str(v).lower() if isinstance(v, bool) else v}" for k, v in extra.items()]
    return "\n".join(lines)


def _announce(mcfg: ModelConfig, extra: dict) -> None:
    print(format_config(mcfg, extra), file=sys.stderr)


@contextlib.contextmanager
def thread_limit():
    """Honour ``ONENET_THREADS`` (0 or unset = library default)."""
    raw = os.environ.get("ONENET_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ONENET_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("ONENET_THREADS must be >= 0")
    if n == 0:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


# -- subcommands -----------------------------------------------------------------------
def cmd_analyze(args, values) -> int:
    mcfg = model_config(values)
    size, batch = run_value(values, "input_size"), run_value(values, "batch")
    _announce(mcfg, {"input_size": size, "batch": batch})
    shape = (batch, mcfg.input_channels, size, size)
    report = cost.analyze(mcfg, shape)
    reports = [report]
    if args.baseline:
        if args.baseline not in ("onenet_e", "onenet_ed", "unet_baseline"):
            raise UsageError(f"unknown baseline variant {args.baseline!r}")
        base_cfg = dataclasses.replace(mcfg, variant=args.baseline, use_spatial=False)
        name = cost.report_name(base_cfg)
        base = cost.analyze(base_cfg, shape, name=name + "_ref" if name == report.name else name)
        reports.append(base)
    comparison = cost.compare(reports, reports[-1].name)
    if args.json:
        print(comparison.to_json())
        return EXIT_OK
    print(report.table())
    print()
    print(comparison.table())
    if size != 256:
        small = cost.analyze(mcfg, (batch, mcfg.input_channels, 256, 256))
        print(f"{report.name} at 256x256: {small.gflops:.2f} GFLOPs")
    ref = cost.PUBLISHED_MODEL_SIZES.get(f"{mcfg.variant.replace('unet_baseline', 'unet')}_{mcfg.layers}")
    if ref and not mcfg.use_spatial:
        print(f"published reference: {ref[0]:.2f} M params, {ref[2]:.2f} GFLOPs")
    return EXIT_OK


def cmd_check(args, values) -> int:
    mcfg = model_config(values)
    _announce(mcfg, {"suite": args.suite, "seed": args.seed})
    results = checks.run_suite(args.suite, seed=args.seed)
    for r in results:
        print(r.summary())
    failed = [r for r in results if not r.ok]
    print("all properties passed" if not failed else
          f"{sum(r.failed for r in failed)} properties failed")
    return EXIT_PROPERTY if failed else EXIT_OK


def _load_batches(directory: str, mcfg: ModelConfig, batch_size: int):
    return data.load_pnm_dataset(directory, batch_size=batch_size,
                                 num_classes=mcfg.num_classes, scale=mcfg.scale)


def cmd_train(args, values) -> int:
    mcfg, tcfg = model_config(values), train_config(values)
    run = {k: run_value(values, k) for k in ("image_size", "train_samples", "eval_samples",
                                               "data_dir", "eval_dir")}
    _announce(mcfg, {**dataclasses.asdict(tcfg), **run})
    if run["data_dir"]:
        train_data = _load_batches(run["data_dir"], mcfg, tcfg.batch_size)
        eval_data = _load_batches(run["eval_dir"], mcfg, tcfg.batch_size) if run["eval_dir"] else None
    else:
        side = run["image_size"]
        mcfg.check_input(side, side)
        train_data = data.generate_toy_dataset(run["train_samples"], side, side, mcfg.num_classes,
                                               seed=tcfg.seed, batch_size=tcfg.batch_size,
                                               scale=mcfg.scale)
        eval_data = data.generate_toy_dataset(run["eval_samples"], side, side, mcfg.num_classes,
                                              seed=tcfg.seed + 1, batch_size=tcfg.batch_size,
                                              scale=mcfg.scale)
    net = build(mcfg, seed=tcfg.seed)

    def report(rec):
        m = rec.metrics
        print(f"epoch {rec.epoch:4d}  lr {rec.lr:.2e}  train_loss {rec.train_loss:.4f}  "
              f"ce {m.ce_loss:.4f}  miou {m.mean_iou:.4f}  dice {m.dice:.4f}  acc {m.pixel_accuracy:.4f}",
              flush=True)

    result = train.train(net, tcfg, train_data, eval_data, on_epoch=None if args.quiet else report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if result.best_state:
        train.restore(net, result.best_state)
    weights.save_weights(net, out)
    metrics_path = Path(args.metrics) if args.metrics else out.with_suffix(".csv")
    train.write_history_csv(metrics_path, result.history)
    cfg_path = Path(str(out) + ".cfg")
    cfg_path.write_text(mcfg.canonical_text())
    best = result.best
    if best is not None:
        print(f"best epoch {best.epoch}: miou {best.metrics.mean_iou:.4f} dice {best.metrics.dice:.4f}")
    print(f"wrote {out}, {metrics_path}, {cfg_path}")
    return EXIT_OK


def cmd_infer(args, values) -> int:
    mcfg = model_config(values)
    _announce(mcfg, {"weights": args.weights, "image": args.image})
    net = weights.load_network(args.weights, mcfg)
    img = data.read_image(args.image)
    x = Tensor(img[None], dtype=np.float32)
    mask = train.predict(net, x)[0]
    data.write_mask(args.out, mask)
    counts = np.bincount(mask.reshape(-1), minlength=mcfg.num_classes)
    print(f"wrote {args.out} ({mask.shape[0]}x{mask.shape[1]}); class pixel counts "
          + " ".join(f"{c}:{n}" for c, n in enumerate(counts)))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------
def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="flat key=value config file")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable, wins over everything)")
    g.add_argument("--variant", choices=("onenet_e", "onenet_ed", "unet_baseline"))
    g.add_argument("--layers", type=int)
    g.add_argument("--base-channels", type=int)
    g.add_argument("--scale", type=int)
    g.add_argument("--num-classes", type=int)
    g.add_argument("--spatial", dest="use_spatial", action="store_const", const=True,
                   help="enable the 1D spatial convolutions")
    g.add_argument("--seed", type=int)


FLAG_KEYS = ("variant", "layers", "base_channels", "scale", "num_classes", "use_spatial")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onenet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter / FLOP report")
    _add_config_flags(p)
    p.add_argument("--input-size", type=int)
    p.add_argument("--baseline", help="variant to compute reductions against")
    p.add_argument("--json", action="store_true", help="emit the JSON document only")

    p = sub.add_parser("check", help="run oracle / property suites")
    _add_config_flags(p)
    p.add_argument("--suite", choices=checks.SUITES + ("all",), default="all")

    p = sub.add_parser("train", help="train on toy data or a PPM/PGM directory")
    _add_config_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--out", required=True, help="weights archive to write")
    p.add_argument("--metrics", help="metrics CSV (default: <out>.csv)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("infer", help="predict a mask for one PPM image")
    _add_config_flags(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="PGM mask to write")
    return parser


def _flag_values(args) -> dict:
    out = {k: getattr(args, k, None) for k in FLAG_KEYS}
    for k in ("seed", "epochs", "lr", "batch_size", "data_dir", "input_size"):
        if k in vars(args):
            out[k] = getattr(args, k)
    if args.command == "check":
        out.pop("seed")  # the check seed is not a config key
    return out


COMMANDS = {"analyze": cmd_analyze, "check": cmd_check, "train": cmd_train, "infer": cmd_infer}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check" and args.seed is None:
        args.seed = 0
    try:
        values = resolve(args.config, _flag_values(args), args.overrides)
        with thread_limit():
            return COMMANDS[args.command](args, values)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (UsageError, OneNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
