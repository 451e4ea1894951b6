"""Command-line entry point: ``mufia {train,attack,sweep,toy,analyze}``.

Every command accepts ``--config <json>``; explicit flags override keys
from the file.  Outputs are written atomically, and reports carry no
timestamps, so identical inputs give byte-identical files.
"""

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analytics
from .attack import AttackConfig, attack_dataset, attack_image, luma_spectrum
from .blockdct import apply_filter_bank
from .classifier import NetworkSpec, evaluate, load_weights, save_weights, train
from .imageio import (
    _atomic_write,
    generate_synthetic_dataset,
    load_cifar10_binary,
    load_png_dir,
    save_png,
)
from .validation import check_block_size

SWEEP_AXES = ("iters", "block", "kappa", "lambda", "kappa-lambda")
AXIS_ALIASES = {"kappa×lambda": "kappa-lambda", "kappaxlambda": "kappa-lambda",
                "kappa*lambda": "kappa-lambda", "kappa_lambda": "kappa-lambda"}
TOY_ELEMENTS = ("d00", "d01", "d10", "d11")
LOSS_NAMES = {"cosine": "cosine", "ce": "cross-entropy", "cross-entropy": "cross-entropy"}
SYNTHETIC_DEFAULTS = {"k": 5, "n": 200, "side": 32, "seed": 0}
DEFAULT_DATA = "synthetic"


class CLIError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a command needs; mirrors :class:`AttackConfig` plus I/O."""

    data: str = DEFAULT_DATA
    model: str = None
    out: str = "runs"
    kappa: float = 0.99
    lam: float = 20.0
    iters: int = 100
    lr: float = 0.1
    block_size: int = 32
    mode: str = "ground-truth"
    loss: str = "cosine"
    seed: int = 0
    batch: int = 32
    dtype: str = "float32"
    epochs: int = 30
    train_lr: float = 0.01
    axis: str = None
    values: str = None
    extra: dict = field(default_factory=dict)

    # JSON spelling of keys that differ from attribute names
    JSON_KEYS = {"lambda": "lam", "n_iters": "iters", "block": "block_size"}

    @classmethod
    def from_json(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise CLIError(f"config {path} must be a JSON object")
        known = {f.name for f in fields(cls)} - {"extra"}
        out = {}
        for key, value in raw.items():
            name = cls.JSON_KEYS.get(key, key.replace("-", "_"))
            if name not in known:
                raise CLIError(f"config {path}: unknown key {key!r}")
            out[name] = value
        return out

    def attack_config(self, **overrides):
        params = dict(kappa=self.kappa, lam=self.lam, n_iters=self.iters, lr=self.lr,
                      block_size=self.block_size, mode=self.mode,
                      loss_kind=LOSS_NAMES.get(self.loss, self.loss), seed=self.seed,
                      batch=self.batch, dtype=self.dtype)
        params.update(overrides)
        try:
            return AttackConfig(**params)
        except (TypeError, ValueError) as exc:
            raise CLIError(str(exc)) from exc


def parse_data_spec(spec):
    """``(kind, options)`` for ``synthetic[:k=..,n=..]``, ``cifar10:<path>`` or ``png-dir:<path>``."""
    kind, _, rest = spec.partition(":")
    if kind in ("cifar10", "png-dir"):
        path, _, opts = rest.partition(",")
        if not path:
            raise CLIError(f"data spec {spec!r} needs a path")
        options = {"path": str(Path(path).resolve())}
    elif kind == "synthetic":
        options, opts = dict(SYNTHETIC_DEFAULTS), rest
    else:
        raise CLIError(f"unknown data source {kind!r}; use synthetic, cifar10:<path> or png-dir:<path>")
    for item in filter(None, opts.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise CLIError(f"bad data option {item!r}; expected key=value")
        options[key.strip()] = value.strip()
    allowed = {"path", "split", "limit"} | (set(SYNTHETIC_DEFAULTS) if kind == "synthetic" else set())
    unknown = set(options) - allowed
    if unknown:
        raise CLIError(f"unknown data options {sorted(unknown)} for {kind}")
    try:
        for key in set(options) & (set(SYNTHETIC_DEFAULTS) | {"limit"}):
            options[key] = int(options[key])
    except ValueError as exc:
        raise CLIError(f"data spec {spec!r}: {exc}") from exc
    if options.get("split", "test") not in ("train", "test", "all"):
        raise CLIError(f"split must be train, test or all, got {options['split']!r}")
    if "path" in options and not Path(options["path"]).exists():
        raise CLIError(f"data path {options['path']} does not exist")
    return kind, options


def load_data(spec, default_split):
    """Load a dataset spec and return ``(selected split, held-out test split)``."""
    kind, options = parse_data_spec(spec)
    if kind == "synthetic":
        full = generate_synthetic_dataset(options["k"], options["n"], options["side"], options["seed"])
    elif kind == "cifar10":
        full = load_cifar10_binary(options["path"])
    else:
        full = load_png_dir(options["path"])
    split = options.get("split", default_split)
    if split == "all":
        selected, test = full, full
    else:
        train_part, test = full.split()
        selected = train_part if split == "train" else test
    if "limit" in options:
        selected = selected.subset(np.arange(min(options["limit"], len(selected))))
    return selected, test


def write_text(path, text):
    def write(tmp):
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    _atomic_write(path, write)


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def format_q_csv(q):
    rows = (",".join(f"{float(v):.9g}" for v in row) for row in np.asarray(q))
    return "\n".join(rows) + "\n"


def read_q_csv(path):
    try:
        q = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise CLIError(f"{path}: {exc}") from exc
    if q.shape[0] != q.shape[1]:
        raise CLIError(f"{path}: filter bank is not square ({q.shape})")
    return q


def finite_or_none(value):
    return None if value is None or not math.isfinite(value) else float(value)


def load_model(cfg, side=None):
    if cfg.model is None:
        raise CLIError("--model is required")
    path = Path(cfg.model)
    if not path.is_file():
        raise CLIError(f"model file {path} does not exist")
    weights = load_weights(path)
    if side is not None and weights.spec.side != side:
        raise CLIError(f"model expects {weights.spec.side}px images, data has {side}px")
    return weights


# ---------------------------------------------------------------- commands

def cmd_train(cfg):
    out = Path(cfg.out)
    train_set, test_set = load_data(cfg.data, "train")
    spec = NetworkSpec(train_set.side, train_set.num_classes)
    model_path = Path(cfg.model) if cfg.model else out / "model.bin"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    log = []

    def record(epoch, weights, loss):
        entry = {"epoch": epoch + 1, "loss": loss,
                 "train_accuracy": evaluate(weights, train_set),
                 "test_accuracy": evaluate(weights, test_set)}
        log.append(entry)
        print(f"epoch {epoch + 1}: loss {loss:.4f} test acc {entry['test_accuracy']:.3f}", file=sys.stderr)

    weights = train(spec, train_set, cfg.epochs, cfg.train_lr, cfg.seed, callback=record)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(weights, model_path)
    write_json(out / "train_log.json", {
        "data": cfg.data, "epochs": cfg.epochs, "lr": cfg.train_lr, "seed": cfg.seed,
        "model": str(model_path), "test_accuracy": evaluate(weights, test_set), "history": log,
    })
    return 0


def _result_record(index, result):
    return {
        "index": index, "label": result.label, "target": result.target,
        "orig_prediction": result.orig_prediction, "final_prediction": result.final_prediction,
        "success": bool(result.success), "first_success_iter": result.first_success_iter,
        "sim_loss": result.sim_loss, "psnr": finite_or_none(result.psnr),
    }


def _variant_summary(report):
    return {"loss_kind": report.config.loss_kind, "robust_accuracy": report.robust_accuracy,
            "success_rate": report.success_rate, "mean_sim_loss": report.mean_sim_loss,
            "mean_psnr": finite_or_none(report.mean_psnr)}


def cmd_attack(cfg):
    out = Path(cfg.out)
    dataset, _ = load_data(cfg.data, "test")
    config = cfg.attack_config()
    check_block_size(dataset.side, dataset.side, config.block_size)
    weights = load_model(cfg, dataset.side)
    report = attack_dataset(weights, dataset, config)

    for sub in ("adv", "q", "trace"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(report.results):
        save_png(r.adv_image, out / "adv" / f"{i:05d}.png")
        write_text(out / "q" / f"{i:05d}.csv", format_q_csv(r.q))
        lines = (json.dumps(rec, allow_nan=False) for rec in r.trace_records())
        write_text(out / "trace" / f"{i:05d}.jsonl", "".join(line + "\n" for line in lines))

    summary = analytics.summarize_report(report)
    summary["data"] = cfg.data
    summary["images"] = [_result_record(i, r) for i, r in enumerate(report.results)]
    if config.loss_kind == "cross-entropy":
        # the cross-entropy objective only makes sense next to the cosine baseline
        baseline = attack_dataset(weights, dataset, cfg.attack_config(loss_kind="cosine"))
        summary["loss_comparison"] = [_variant_summary(baseline), _variant_summary(report)]
    write_json(out / "report.json", summary)
    print(f"robust accuracy {report.robust_accuracy:.4f} (clean {report.clean_accuracy:.4f})")
    return 0


def parse_values(axis, text):
    if not text:
        raise CLIError("--values is required for sweep")

    def numbers(chunk, kind):
        try:
            vals = [kind(v) for v in chunk.split(",") if v.strip()]
        except ValueError as exc:
            raise CLIError(f"bad sweep value: {exc}") from exc
        if not vals:
            raise CLIError("sweep value list is empty")
        return vals

    if axis == "kappa-lambda":
        parts = text.split(";")
        if len(parts) != 2:
            raise CLIError("kappa-lambda sweeps take 'k1,k2,...;l1,l2,...'")
        return [(k, lam) for k in numbers(parts[0], float) for lam in numbers(parts[1], float)]
    kind = int if axis in ("iters", "block") else float
    return [(v,) for v in numbers(text, kind)]


def cmd_sweep(cfg):
    axis = AXIS_ALIASES.get(cfg.axis, cfg.axis)
    if axis not in SWEEP_AXES:
        raise CLIError(f"--axis must be one of {SWEEP_AXES}, got {cfg.axis!r}")
    points = parse_values(axis, cfg.values)
    dataset, _ = load_data(cfg.data, "test")
    weights = load_model(cfg, dataset.side)
    field_map = {"iters": ("n_iters",), "block": ("block_size",), "kappa": ("kappa",),
                 "lambda": ("lam",), "kappa-lambda": ("kappa", "lam")}[axis]
    configs = [cfg.attack_config(**dict(zip(field_map, point))) for point in points]
    for c in configs:
        check_block_size(dataset.side, dataset.side, c.block_size)

    header = (["kappa", "lambda"] if axis == "kappa-lambda" else [axis])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header + ["robust_accuracy", "mean_sim_loss", "mean_psnr"])
    for point, config in zip(points, configs):
        report = attack_dataset(weights, dataset, config)
        writer.writerow([*point, f"{report.robust_accuracy:.9g}", f"{report.mean_sim_loss:.9g}",
                         f"{report.mean_psnr:.9g}"])
        print(f"{axis}={point}: robust accuracy {report.robust_accuracy:.4f}", file=sys.stderr)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    write_text(Path(cfg.out) / f"sweep_{axis}.csv", buf.getvalue())
    return 0


def toy_stimulus(element, side):
    """Grey test image: constant (d00) or a linear luma ramp along x, y or both."""
    lo, hi = 0.25, 0.75
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    ramp = {"d00": np.full((side, side), 0.5),
            "d01": lo + (hi - lo) * j / (side - 1),
            "d10": lo + (hi - lo) * i / (side - 1),
            "d11": lo + (hi - lo) * (i + j) / (2 * (side - 1))}[element]
    return np.repeat(ramp[..., None], 3, axis=2)


def cmd_toy(cfg):
    element = cfg.extra["element"]
    if element not in TOY_ELEMENTS:
        raise CLIError(f"element must be one of {TOY_ELEMENTS}, got {element!r}")
    weights = load_model(cfg)
    image = toy_stimulus(element, weights.spec.side)
    config = cfg.attack_config(block_size=2, lam=0.0, kappa=0.99, mode="decision-flip")
    result = attack_image(weights, image, 0, config)

    coeffs = luma_spectrum(image.astype(np.float64), 2).coeffs
    before = coeffs[0, 0]
    after = apply_filter_bank(coeffs, result.q.astype(np.float64))[0, 0]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(image, out / f"{element}_original.png")
    save_png(result.adv_image, out / f"{element}_adversarial.png")
    write_text(out / f"{element}_q.csv", format_q_csv(result.q))
    write_json(out / f"{element}.json", {
        "element": element,
        "orig_prediction": result.orig_prediction,
        "final_prediction": result.final_prediction,
        "success": bool(result.success),
        "first_success_iter": result.first_success_iter,
        "q": np.asarray(result.q, dtype=np.float64).tolist(),
        "dct_block_before": before.tolist(),
        "dct_block_after": after.tolist(),
        "config": config.to_dict(),
    })
    print(f"{element}: prediction {result.orig_prediction} -> {result.final_prediction}")
    return 0


def cmd_analyze(cfg):
    src = Path(cfg.extra["q_dir"])
    if not src.is_dir():
        raise CLIError(f"{src} is not a directory")
    if (src / "q").is_dir():
        src = src / "q"
    files = sorted(src.glob("*.csv"))
    if not files:
        raise CLIError(f"no Q CSV files in {src}")
    banks = [read_q_csv(f) for f in files]
    sizes = {b.shape for b in banks}
    if len(sizes) != 1:
        raise CLIError(f"inconsistent filter bank sizes: {sorted(sizes)}")
    median = analytics.median_filter_bank(banks)
    heat = analytics.heatmap_transform(median)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "median_q.csv", format_q_csv(median))
    save_png(analytics.render_heatmap(heat), out / "heatmap.png")
    stats = {"n_filter_banks": len(banks), "block_size": median.shape[0],
             **analytics.band_statistics(median), "median_q": median.tolist(), "heatmap": heat.tolist()}
    write_json(out / "stats.json", stats)
    print(f"low-band unchanged {stats['low_band_unchanged_fraction']:.3f}, "
          f"high-band unchanged {stats['high_band_unchanged_fraction']:.3f}")
    return 0


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "sweep": cmd_sweep, "toy": cmd_toy,
            "analyze": cmd_analyze}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its keys")
    common.add_argument("--model", help="weight file (written by train, read by the others)")
    common.add_argument("--data", help="synthetic[:k=5,n=200,side=32,seed=0,split=test,limit=N] | "
                                       "cifar10:<file> | png-dir:<dir>")
    common.add_argument("--out", help="output directory")
    common.add_argument("--kappa", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--iters", type=int)
    common.add_argument("--lr", type=float, help="Adam step size (training lr for train)")
    common.add_argument("--block-size", dest="block_size", type=int)
    common.add_argument("--mode", choices=("ground-truth", "decision-flip"))
    common.add_argument("--loss", choices=("cosine", "ce"))
    common.add_argument("--seed", type=int)
    common.add_argument("--batch", type=int, help="images attacked concurrently")
    common.add_argument("--epochs", type=int)
    common.add_argument("--axis")
    common.add_argument("--values", help="comma list; 'k1,k2;l1,l2' for kappa-lambda")

    parser = _Parser(prog="mufia", description="Multiplicative DCT filter-bank attack toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train the victim classifier")
    sub.add_parser("attack", parents=[common], help="attack a dataset")
    sub.add_parser("sweep", parents=[common], help="ablation sweep to CSV")
    toy = sub.add_parser("toy", parents=[common], help="2x2 filter-bank toy experiment")
    toy.add_argument("element", choices=TOY_ELEMENTS)
    analyze = sub.add_parser("analyze", parents=[common], help="median filter bank and heatmap")
    analyze.add_argument("q_dir", help="directory of Q CSVs (or an attack output directory)")
    return parser


def resolve_config(args):
    values = RunConfig.from_json(args.config) if args.config else {}
    for name in ("model", "data", "out", "kappa", "lam", "iters", "block_size", "mode", "loss",
                 "seed", "batch", "epochs", "axis", "values"):
        flag = getattr(args, name)
        if flag is not None:
            values[name] = flag
    if args.lr is not None:
        values["train_lr" if args.command == "train" else "lr"] = args.lr
    cfg = RunConfig(**values)
    if cfg.loss not in LOSS_NAMES:
        raise CLIError(f"loss must be cosine or ce, got {cfg.loss!r}")
    cfg.out = str(Path(cfg.out).resolve())
    if cfg.model is not None:
        cfg.model = str(Path(cfg.model).resolve())
    for name in ("element", "q_dir"):
        if hasattr(args, name):
            value = getattr(args, name)
            cfg.extra[name] = str(Path(value).resolve()) if name == "q_dir" else value
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (CLIError, ValueError, OSError, TypeError) as exc:
        print(f"mufia {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
