"""Command-line interface: gen, train, eval, calibrate, ood.

Every run resolves its full configuration up front, writes outputs atomically
(temp file + rename), and drops a RunManifest JSON next to each output file.
The manifest's "argv" entry replays the run exactly: outputs are pure
functions of (arguments, input files), so a replay reproduces them
byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .calibrate import (
    apply_temperature,
    compute_ece,
    fit_temperature,
    reliability_csv,
    reliability_table,
)
from .errors import BayescallError, ConfigurationError
from .model import ModelConfig, load_model, mean_logits, save_model
from .nn import log_softmax, softmax
from .pileup import (
    Dataset,
    GeneratorConfig,
    balance_undersample,
    encode_dataset,
    generate_dataset,
    perturb_dataset,
    read_dataset,
    reduce_dataset_depth,
    split_dataset,
    write_dataset,
)
from .predict import predict_batch
from .train import TrainConfig, train_model
from .flipout import ElboConfig

TRAIN_FRACTION = 0.8
UNCERTAIN_WINDOW = (0.4, 0.6)
HISTOGRAM_BINS = 20
ECE_BINS = 10


# ---------------------------------------------------------------------------
# Atomic output plumbing
# ---------------------------------------------------------------------------

def _atomic_write_text(path: str, content: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _atomic_via(path: str, writer) -> None:
    """Run writer(tmp_path) then rename tmp_path onto path."""
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Run manifests
# ---------------------------------------------------------------------------

# flag table per command: (flag, attribute, kind); kind "value" is always
# emitted, "optional" only when set, "list" joins with commas, "flag" is a
# bare switch emitted when true.
_ARGV_TABLE = {
    "gen": [
        ("--out", "out", "value"),
        ("--count", "count", "value"),
        ("--depth", "depth", "value"),
        ("--width", "width", "value"),
        ("--error-rate", "error_rate", "value"),
        ("--artifact-error-rate", "artifact_error_rate", "value"),
        ("--vaf", "vaf", "value"),
        ("--germline-fraction", "germline_fraction", "value"),
        ("--balance", "balance", "value"),
        ("--seed", "seed", "value"),
    ],
    "train": [
        ("--data", "data", "value"),
        ("--head", "head", "value"),
        ("--hidden", "hidden", "list"),
        ("--epochs", "epochs", "value"),
        ("--batch", "batch", "value"),
        ("--lr", "lr", "value"),
        ("--kl-mode", "kl_mode", "value"),
        ("--variational-everywhere", "variational_everywhere", "flag"),
        ("--seed", "seed", "value"),
        ("--out", "out", "value"),
        ("--history", "history", "optional"),
    ],
    "eval": [
        ("--model", "model", "value"),
        ("--data", "data", "value"),
        ("--mc-samples", "mc_samples", "value"),
        ("--seed", "seed", "value"),
        ("--out", "out", "value"),
        ("--report", "report", "optional"),
    ],
    "calibrate": [
        ("--model", "model", "value"),
        ("--data", "data", "value"),
        ("--bins", "bins", "value"),
        ("--out", "out", "value"),
        ("--reliability", "reliability", "optional"),
    ],
    "ood": [
        ("--model", "model", "value"),
        ("--data", "data", "value"),
        ("--perturb", "perturb", "value"),
        ("--sigma", "sigma", "optional-list"),
        ("--depth", "depth", "optional-list"),
        ("--mc-samples", "mc_samples", "value"),
        ("--seed", "seed", "value"),
        ("--out", "out", "value"),
    ],
}


def _format_value(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _canonical_argv(command: str, args: argparse.Namespace) -> list[str]:
    argv = [command]
    for flag, attr, kind in _ARGV_TABLE[command]:
        value = getattr(args, attr)
        if kind == "flag":
            if value:
                argv.append(flag)
        elif kind in ("optional", "optional-list"):
            if value is not None:
                joined = (
                    ",".join(_format_value(v) for v in value)
                    if kind == "optional-list"
                    else _format_value(value)
                )
                argv += [flag, joined]
        elif kind == "list":
            argv += [flag, ",".join(_format_value(v) for v in value)]
        else:
            argv += [flag, _format_value(value)]
    return argv


def _write_manifests(
    command: str,
    args: argparse.Namespace,
    inputs: list[str],
    outputs: list[str],
    started: float,
) -> None:
    manifest = {
        "tool": "bayescall",
        "version": __version__,
        "command": command,
        "argv": _canonical_argv(command, args),
        "config": {
            attr: getattr(args, attr) for _, attr, _ in _ARGV_TABLE[command]
        },
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": outputs,
        "duration_seconds": time.monotonic() - started,
    }
    text = _json_text(manifest)
    for out in outputs:
        _atomic_write_text(f"{out}.manifest.json", text)


# ---------------------------------------------------------------------------
# Shared prediction summaries
# ---------------------------------------------------------------------------

def _dist_summary(dists, labels: np.ndarray) -> dict:
    means = np.array([d.mean for d in dists])
    stds = np.array([d.std for d in dists])
    pooled = np.concatenate([d.samples for d in dists])
    probs = np.column_stack([1.0 - means, means])
    preds = np.argmax(probs, axis=1)
    lo, hi = UNCERTAIN_WINDOW
    # MC means can hit exactly 0/1; floor them so the NLL stays finite
    label_probs = np.maximum(probs[np.arange(labels.size), labels], 1e-300)
    return {
        "accuracy": float(np.mean(preds == labels)),
        "mean_nll": -float(np.mean(np.log(label_probs))),
        "fraction_uncertain": float(np.mean((means >= lo) & (means <= hi))),
        "mean_abs_deviation": float(np.mean(np.abs(means - 0.5))),
        "mean_std": float(np.mean(stds)),
        "pooled_sample_variance": float(np.var(pooled)),
        "means": means.tolist(),
        "stds": stds.tolist(),
        "labels": labels.tolist(),
    }


def run_ood_experiment(model, ds: Dataset, perturb: str, levels, n_mc: int, seed: int) -> dict:
    """Predict under feature noise or reduced read depth, one dump per level.

    `ds` holds base-level examples.  Noise levels are Gaussian sigmas applied
    to the encoded features; depth levels keep the first d reads and pad back
    to full depth with GAP rows so the model input shape is unchanged.
    """
    if perturb not in ("noise", "depth"):
        raise ConfigurationError(f"perturb must be 'noise' or 'depth', got {perturb!r}")
    levels = list(levels)
    if not levels:
        raise ConfigurationError("at least one perturbation level is required")
    full_depth = ds.shape[0]
    if perturb == "noise":
        if any(sigma < 0 for sigma in levels):
            raise ConfigurationError(f"sigma levels must be >= 0, got {levels}")
    else:
        if any(not 1 <= d <= full_depth for d in levels):
            raise ConfigurationError(
                f"depth levels must lie in [1, {full_depth}], got {levels}"
            )

    encoded = encode_dataset(ds) if perturb == "noise" else None
    out_levels = []
    for level in levels:
        if perturb == "noise":
            perturbed = perturb_dataset(encoded, level, seed)
        else:
            perturbed = encode_dataset(reduce_dataset_depth(ds, int(level), pad=True))
        dists = predict_batch(model, perturbed, n_mc, seed)
        summary = _dist_summary(dists, perturbed.labels())
        summary["level"] = level
        out_levels.append(summary)
    return {
        "perturbation": perturb,
        "uncertain_window": list(UNCERTAIN_WINDOW),
        "n_mc": n_mc,
        "seed": seed,
        "levels": out_levels,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> None:
    started = time.monotonic()
    cfg = GeneratorConfig(
        depth=args.depth,
        width=args.width,
        error_rate=args.error_rate,
        artifact_error_rate=args.artifact_error_rate,
        vaf=args.vaf,
        germline_fraction=args.germline_fraction,
        class_balance=args.balance,
    )
    ds = generate_dataset(cfg, args.count, args.seed)
    _atomic_via(args.out, lambda tmp: write_dataset(ds, tmp))
    _write_manifests("gen", args, [], [args.out], started)


def _cmd_train(args) -> None:
    started = time.monotonic()
    ds = read_dataset(args.data)
    balanced = balance_undersample(ds, args.seed)
    train_raw, test_raw = split_dataset(balanced, TRAIN_FRACTION, args.seed)
    train_ds = encode_dataset(train_raw)
    test_ds = encode_dataset(test_raw)
    depth, width = train_ds.shape
    mc = ModelConfig(
        input_dims=(depth, 6 * width),
        hidden=args.hidden,
        head_kind=args.head,
        variational_everywhere=args.variational_everywhere,
    )
    tc = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        elbo=ElboConfig(kl_mode=args.kl_mode),
    )
    model, history = train_model(mc, tc, train_ds, test_ds)
    _atomic_via(args.out, lambda tmp: save_model(model, tmp))
    outputs = [args.out]
    if args.history is not None:
        _atomic_write_text(args.history, history.to_jsonl())
        outputs.append(args.history)
    _write_manifests("train", args, [args.data], outputs, started)


def _cmd_eval(args) -> None:
    started = time.monotonic()
    model = load_model(args.model)
    encoded = encode_dataset(read_dataset(args.data))
    labels = encoded.labels()
    dists = predict_batch(model, encoded, args.mc_samples, args.seed)
    lines = []
    for i, (dist, label) in enumerate(zip(dists, labels)):
        lines.append(
            json.dumps(
                {
                    "example_index": i,
                    "label": int(label),
                    "mean": dist.mean,
                    "std": dist.std,
                    "samples": dist.samples.tolist(),
                }
            )
        )
    _atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    outputs = [args.out]
    if args.report is not None:
        summary = _dist_summary(dists, labels)
        means = np.array(summary.pop("means"))
        summary.pop("stds")
        summary.pop("labels")
        confidences = np.maximum(means, 1.0 - means)
        correctness = (np.argmax(np.column_stack([1 - means, means]), axis=1) == labels)
        edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
        pooled = np.concatenate([d.samples for d in dists])
        report = {
            "accuracy": summary["accuracy"],
            "mean_nll": summary["mean_nll"],
            "ece": compute_ece(confidences, correctness, ECE_BINS),
            "fraction_uncertain": summary["fraction_uncertain"],
            "mean_std": summary["mean_std"],
            "histogram": {
                "bin_edges": edges.tolist(),
                "counts_mean": np.histogram(means, bins=edges)[0].tolist(),
                "counts_pooled_samples": np.histogram(pooled, bins=edges)[0].tolist(),
            },
        }
        _atomic_write_text(args.report, _json_text(report))
        outputs.append(args.report)
    _write_manifests("eval", args, [args.model, args.data], outputs, started)


def _cmd_calibrate(args) -> None:
    started = time.monotonic()
    model = load_model(args.model)
    if model.is_stochastic:
        raise ConfigurationError(
            "temperature scaling applies to the dense model only"
        )
    encoded = encode_dataset(read_dataset(args.data))
    labels = encoded.labels()
    features = np.stack([ex.features.reshape(-1) for ex in encoded])
    logits = mean_logits(model, features)
    temperature = fit_temperature(logits, labels)

    correctness = np.argmax(logits, axis=1) == labels
    probs_before = softmax(logits)
    probs_after = apply_temperature(logits, temperature.T)
    conf_before = probs_before.max(axis=1)
    conf_after = probs_after.max(axis=1)
    logp = log_softmax(logits)
    logp_t = log_softmax(logits / temperature.T)
    rows = np.arange(labels.size)
    result = {
        "temperature": temperature.T,
        "bins": args.bins,
        "ece_before": compute_ece(conf_before, correctness, args.bins),
        "ece_after": compute_ece(conf_after, correctness, args.bins),
        "nll_before": -float(np.mean(logp[rows, labels])),
        "nll_after": -float(np.mean(logp_t[rows, labels])),
        "n_validation": int(labels.size),
    }
    _atomic_write_text(args.out, _json_text(result))
    outputs = [args.out]
    if args.reliability is not None:
        table = reliability_table(conf_after, correctness, args.bins)
        _atomic_write_text(args.reliability, reliability_csv(table))
        outputs.append(args.reliability)
    _write_manifests("calibrate", args, [args.model, args.data], outputs, started)


def _cmd_ood(args) -> None:
    started = time.monotonic()
    model = load_model(args.model)
    ds = read_dataset(args.data)
    if args.perturb == "noise":
        if args.sigma is None:
            raise ConfigurationError("--perturb noise requires --sigma")
        levels = args.sigma
    else:
        if args.depth is None:
            raise ConfigurationError("--perturb depth requires --depth")
        levels = args.depth
    report = run_ood_experiment(model, ds, args.perturb, levels, args.mc_samples, args.seed)
    _atomic_write_text(args.out, _json_text(report))
    _write_manifests("ood", args, [args.model, args.data], [args.out], started)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {exc}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayescall", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bayescall {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate a labeled synthetic pileup dataset")
    gen.add_argument("--out", required=True, help="output dataset path (.pmx)")
    gen.add_argument("--count", type=int, required=True, help="number of examples")
    gen.add_argument("--depth", type=int, default=100)
    gen.add_argument("--width", type=int, default=10)
    gen.add_argument("--error-rate", type=float, default=0.01)
    gen.add_argument("--artifact-error-rate", type=float, default=0.05)
    gen.add_argument("--vaf", type=float, default=0.2)
    gen.add_argument("--germline-fraction", type=float, default=0.5)
    gen.add_argument("--balance", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=_cmd_gen)

    train = sub.add_parser(
        "train",
        help="balance, split 0.8/0.2, encode, and train a model on a dataset",
    )
    train.add_argument("--data", required=True)
    train.add_argument("--head", choices=["dense", "flipout"], default="dense")
    train.add_argument("--hidden", type=_int_list, default=[64, 32])
    train.add_argument("--epochs", type=int, default=25)
    train.add_argument("--batch", type=int, default=128)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--kl-mode", choices=["analytic", "mc"], default="analytic")
    train.add_argument("--variational-everywhere", action="store_true")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", required=True, help="model JSON path")
    train.add_argument("--history", default=None, help="per-epoch JSONL path")
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="predictive distributions and metrics on a dataset")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--mc-samples", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True, help="per-example predictions JSONL")
    ev.add_argument("--report", default=None, help="summary report JSON")
    ev.set_defaults(func=_cmd_eval)

    cal = sub.add_parser("calibrate", help="fit a temperature on validation data")
    cal.add_argument("--model", required=True)
    cal.add_argument("--data", required=True)
    cal.add_argument("--bins", type=int, default=ECE_BINS)
    cal.add_argument("--out", required=True, help="calibration result JSON")
    cal.add_argument("--reliability", default=None, help="reliability table CSV")
    cal.set_defaults(func=_cmd_calibrate)

    ood = sub.add_parser("ood", help="evaluate under feature noise or reduced depth")
    ood.add_argument("--model", required=True)
    ood.add_argument("--data", required=True)
    ood.add_argument("--perturb", choices=["noise", "depth"], required=True)
    ood.add_argument("--sigma", type=_float_list, default=None)
    ood.add_argument("--depth", type=_int_list, default=None)
    ood.add_argument("--mc-samples", type=int, default=100)
    ood.add_argument("--seed", type=int, default=0)
    ood.add_argument("--out", required=True, help="per-level report JSON")
    ood.set_defaults(func=_cmd_ood)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except BayescallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
