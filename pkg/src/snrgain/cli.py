"""Command-line interface.

Subcommands: train, analyze, sweep, prune, report. Machine-readable
results go to files and stdout; progress and diagnostics go to stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage error. For analyze and
sweep, exit 1 also covers "ran but the requested statistics were
undefined/uncomputable" so pipelines can distinguish partial output.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .experiment import (
    SweepSpec,
    build_architecture,
    emit_report,
    flag_outliers,
    parse_records_csv,
    resolve_dataset,
    run_sweep,
    summarize,
)
from .metrics import MetricConfig, analyze_network, prune_weak_inputs
from .nn import load_network, save_network
from .tensor import RngState
from .train import TrainConfig, evaluate, train

DATA_DIR_ENV = "SNRGAIN_DATA_DIR"
KNOWN_DATASETS = ("mnist", "cifar10", "glyphs", "synthetic", "container")


class UsageError(Exception):
    pass


def _load_data_spec(arg, data_dir=None):
    """Dataset spec from a bare id, an inline JSON object, or a JSON file."""
    if arg.strip().startswith("{"):
        spec = json.loads(arg)
    elif os.path.exists(arg) and not os.path.isdir(arg):
        with open(arg) as f:
            spec = json.load(f)
    else:
        spec = {"id": arg}
    if spec.get("id") not in KNOWN_DATASETS:
        raise UsageError(
            f"unknown dataset id {spec.get('id')!r}; known: {', '.join(KNOWN_DATASETS)}"
        )
    if spec["id"] in ("mnist", "cifar10") and "dir" not in spec:
        d = data_dir or os.environ.get(DATA_DIR_ENV)
        if not d:
            raise UsageError(
                f"dataset {spec['id']!r} needs 'dir' in the spec, --data-dir, "
                f"or ${DATA_DIR_ENV}"
            )
        spec["dir"] = d
    return spec


def _metric_config(args):
    return MetricConfig(
        low_input_threshold=args.threshold,
        apply_max_scaling=not args.no_max_scale,
        apply_softmax_centering=not args.no_softmax_center,
        weighted_mean=not args.unweighted,
    )


def _add_metric_flags(p):
    p.add_argument("--threshold", type=float, default=0.01,
                   help="low-input filter threshold (default 0.01)")
    p.add_argument("--no-max-scale", action="store_true",
                   help="disable per-input max scaling")
    p.add_argument("--no-softmax-center", action="store_true",
                   help="disable softmax weight centering")
    p.add_argument("--unweighted", action="store_true",
                   help="plain instead of activity-weighted layer means")
    p.add_argument("--eval-batch", type=int, default=2000,
                   help="test samples used for the metric batch")


def _add_data_flags(p):
    p.add_argument("--data", required=True,
                   help="dataset id, inline JSON spec, or JSON spec file")
    p.add_argument("--data-dir", default=None,
                   help=f"directory with dataset binaries (or ${DATA_DIR_ENV})")


def cmd_train(args):
    data_spec = _load_data_spec(args.data, args.data_dir)
    if args.config:
        with open(args.config) as f:
            cfg = TrainConfig.from_json(f.read())
    else:
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                          learning_rate=args.learning_rate)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    train_data, test_data = resolve_dataset(data_spec)
    net = build_architecture(args.arch, RngState(cfg.seed).derive(0))
    print(f"training {args.arch} on {data_spec['id']} "
          f"({train_data.sample_count} train / {test_data.sample_count} test), "
          f"config {cfg.label}", file=sys.stderr)
    result = train(net, train_data, cfg, test_data)
    save_network(result.network, args.out)
    result_path = args.result or args.out + ".result.json"
    with open(result_path, "w") as f:
        json.dump(
            {
                "train_accuracy": result.train_accuracy,
                "test_accuracy": result.test_accuracy,
                "epochs_completed": result.epochs_completed,
                "config": cfg.to_dict(),
                "network_file": os.path.basename(args.out),
            },
            f, indent=2, sort_keys=True,
        )
        f.write("\n")
    print(f"train_accuracy {result.train_accuracy!r}")
    print(f"test_accuracy {result.test_accuracy!r}")
    return 0


def _parse_layer_range(text, layer_count):
    if not text:
        return None
    parts = text.split("..")
    try:
        if len(parts) == 1:
            m = n = int(parts[0])
        else:
            m, n = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"bad layer range {text!r}; expected like '1..2'")
    if not (1 <= m <= n <= layer_count):
        raise UsageError(f"layer range {text!r} outside 1..{layer_count}")
    return (m, n)


def cmd_analyze(args):
    net = load_network(args.net)
    data_spec = _load_data_spec(args.data, args.data_dir)
    _, test_data = resolve_dataset(data_spec)
    cfg = _metric_config(args)
    batch = test_data.inputs[: args.eval_batch]
    merits = analyze_network(net, batch, cfg)
    count = len(merits)
    rng = _parse_layer_range(args.layers, count) or ((1, count - 1) if count > 1 else (1, 1))
    picked = merits[rng[0] - 1 : rng[1]]
    agg = (
        float(sum(lm.mean_g for lm in picked))
        if all(lm.defined for lm in picked)
        else math.nan
    )
    print(f"{'layer':>5} {'mean_S':>12} {'mean_G':>12} {'nodes':>6} {'active_in':>9}")
    for lm in merits:
        print(
            f"{lm.layer_index:>5} {lm.mean_s:>12.6f} {lm.mean_g:>12.6f} "
            f"{len(lm.nodes):>6} {lm.active.size:>9}"
            + ("" if lm.defined else f"  UNDEFINED: {lm.reason}")
        )
    print(f"G_agg({rng[0]}..{rng[1]}) {agg!r}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(
                {
                    "layers": [lm.to_dict() for lm in merits],
                    "aggregate": {"range": list(rng), "g": agg},
                },
                f, indent=2, sort_keys=True,
            )
            f.write("\n")
    undefined = [lm.layer_index for lm in picked if not lm.defined]
    if undefined:
        print(f"undefined merit for layers {undefined}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args):
    with open(args.spec) as f:
        spec = SweepSpec.from_dict(json.load(f))
    done = 0

    def progress(run_id, error):
        nonlocal done
        done += 1
        note = f" FAILED: {error}" if error else ""
        print(f"[{done}] {run_id}{note}", file=sys.stderr)

    result = run_sweep(spec, workers=args.workers, progress=progress)
    if not result.records:
        print("no runs completed", file=sys.stderr)
        return 1
    try:
        summary = summarize(result.records)
    except ValueError as e:
        print(f"statistics unavailable: {e}", file=sys.stderr)
        from .experiment import records_csv_text

        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "records.csv"), "w") as f:
            f.write(records_csv_text(result.records))
        return 1
    paths = emit_report(summary, result.records, args.out_dir, failures=result.failures)
    for p in paths:
        print(p)
    for name, st in summary.params.items():
        print(f"{name}: rho={st['rho']:.4f} p={st['p']:.4g} r2={st['r2']:.4f}")
    return 0


def cmd_prune(args):
    net = load_network(args.net)
    data_spec = _load_data_spec(args.data, args.data_dir)
    _, test_data = resolve_dataset(data_spec)
    cfg = _metric_config(args)
    widx = net.weighted_indices()
    if not (1 <= args.layer <= len(widx)):
        raise UsageError(f"--layer must be in 1..{len(widx)}")
    if not (0.0 < args.keep <= 1.0):
        raise UsageError("--keep must be in (0, 1]")
    before = evaluate(net, test_data)
    batch = test_data.inputs[: args.eval_batch]
    merits = analyze_network(net, batch, cfg)
    lm = merits[args.layer - 1]
    if not lm.defined:
        print(f"layer {args.layer} merit undefined: {lm.reason}", file=sys.stderr)
        return 1
    pruned = net.copy()
    li = widx[args.layer - 1]
    w = pruned.weights[li].weights
    for nd in lm.nodes:
        if nd.defined:
            w[:, nd.node_index] = prune_weak_inputs(nd, w[:, nd.node_index], args.keep)
    after = evaluate(pruned, test_data)
    save_network(pruned, args.out)
    print(f"accuracy_before {before!r}")
    print(f"accuracy_after {after!r}")
    return 0


def cmd_report(args):
    records = parse_records_csv(args.records)
    records = flag_outliers(records)
    summary = summarize(records)
    paths = emit_report(summary, records, args.out_dir)
    for p in paths:
        print(p)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="snrgain",
        description="Train small networks and score their nodes by "
        "signal-to-noise figures of merit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network and save it")
    _add_data_flags(p)
    p.add_argument("--arch", required=True,
                   help="mnist | mnist_desk | cifar | dense:<w1>-..-<wn>")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output network file")
    p.add_argument("--result", help="result JSON path (default <out>.result.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="per-layer merit figures for a saved network")
    p.add_argument("--net", required=True)
    _add_data_flags(p)
    p.add_argument("--layers", help="aggregate layer range, e.g. 1..2")
    p.add_argument("--out", help="write per-layer merit records as JSON")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="run a training sweep and correlate G with accuracy")
    p.add_argument("--spec", required=True, help="SweepSpec JSON file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("prune", help="zero weakly correlated inputs of one layer")
    p.add_argument("--net", required=True)
    _add_data_flags(p)
    p.add_argument("--keep", type=float, required=True,
                   help="fraction of active inputs to keep per node")
    p.add_argument("--layer", type=int, required=True,
                   help="1-based weighted layer index")
    p.add_argument("--out", required=True, help="output network file")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("report", help="recompute statistics from a records.csv")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failures map to exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
