"""Multi-run sweeps and the correlation statistics reported on them.

A sweep trains one network per (config, repetition) pair with derived
seeds, computes the per-layer and aggregate gain figures on the test
batch, and collects everything into RunRecords. Spearman rho (with the
two-sided t-approximation p-value) is computed over all records; r^2 is
computed with outlier records removed, where an outlier is a run whose
penultimate layer shows a mean output activation rate above 0.9.
"""

import functools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as _sstats

from . import datasets as ds
from .metrics import MetricConfig, analyze_network
from .nn import Network, build_cifar_net, build_mnist_net, dense_spec, make_network
from .tensor import RngState
from .train import TrainConfig, TrainingDiverged, evaluate, train

OUTLIER_ACTIVATION_RATE = 0.9


# --- architectures and datasets ----------------------------------------

def build_architecture(arch, rng: RngState) -> Network:
    """Instantiate a named architecture with seeded initial weights.

    Known names: "mnist" (784-1024-1000-10), "mnist_desk"
    (784-256-128-10), "cifar" (the 5-layer CNN), and parametric
    "dense:<in>-<h1>-...-<out>" fully connected nets.
    """
    if arch == "mnist":
        return build_mnist_net("full", rng)
    if arch == "mnist_desk":
        return build_mnist_net("desk", rng)
    if arch == "cifar":
        return build_cifar_net(rng)
    if arch.startswith("dense:"):
        widths = [int(t) for t in arch.split(":", 1)[1].split("-")]
        if len(widths) < 2:
            raise ValueError(f"dense architecture needs >= 2 widths: {arch!r}")
        specs = [
            dense_spec(a, b, "relu") for a, b in zip(widths[:-2], widths[1:-1])
        ] + [dense_spec(widths[-2], widths[-1], "softmax")]
        return make_network(specs, rng)
    raise ValueError(f"unknown architecture {arch!r}")


def _seeded_prefix(data, count, seed):
    perm = RngState(seed).generator.permutation(data.sample_count)
    return data.subset(perm[:count])


def resolve_dataset(spec: dict):
    """Materialize (train, test) datasets from a dataset spec dict.

    ids: mnist (IDX files under "dir"), cifar10 (bin batches under
    "dir"), glyphs (generated), synthetic (correlated groups), container
    (a saved dataset file, split by seed).
    """
    kind = spec["id"]
    seed = int(spec.get("seed", 0))
    if kind == "mnist":
        d = spec["dir"]
        tr = ds.load_mnist_idx(
            os.path.join(d, "train-images-idx3-ubyte"),
            os.path.join(d, "train-labels-idx1-ubyte"),
        )
        te = ds.load_mnist_idx(
            os.path.join(d, "t10k-images-idx3-ubyte"),
            os.path.join(d, "t10k-labels-idx1-ubyte"),
        )
        n_tr = int(spec.get("train_count", 8000))
        n_te = int(spec.get("test_count", 2000))
        return _seeded_prefix(tr, n_tr, seed), _seeded_prefix(te, n_te, seed + 1)
    if kind == "cifar10":
        d = spec["dir"]
        tr = ds.load_cifar10_bin(
            [os.path.join(d, f"data_batch_{i}.bin") for i in range(1, 6)]
        )
        te = ds.load_cifar10_bin(os.path.join(d, "test_batch.bin"))
        n_tr = int(spec.get("train_count", 10000))
        n_te = int(spec.get("test_count", 2000))
        return _seeded_prefix(tr, n_tr, seed), _seeded_prefix(te, n_te, seed + 1)
    if kind == "glyphs":
        n_tr = int(spec.get("train_count", 8000))
        n_te = int(spec.get("test_count", 2000))
        shape = tuple(spec.get("image_shape", (1, 28, 28)))
        data = ds.synthetic_glyphs(
            int(spec.get("classes", 10)),
            n_tr + n_te,
            RngState(seed),
            image_shape=shape,
            shift=int(spec.get("shift", 4)),
            noise_sigma=float(spec.get("noise_sigma", 0.3)),
        )
        return data.subset(np.arange(n_tr)), data.subset(np.arange(n_tr, n_tr + n_te))
    if kind == "synthetic":
        n_tr = int(spec.get("train_count", 2000))
        n_te = int(spec.get("test_count", 1000))
        data = ds.synthetic_correlated(
            int(spec["groups"]),
            int(spec["group_size"]),
            n_tr + n_te,
            float(spec.get("noise_sigma", 0.1)),
            RngState(seed),
        )
        return data.subset(np.arange(n_tr)), data.subset(np.arange(n_tr, n_tr + n_te))
    if kind == "container":
        data = ds.load_dataset(spec["path"])
        n_tr = int(spec.get("train_count", data.sample_count * 4 // 5))
        n_te = int(spec.get("test_count", data.sample_count - n_tr))
        return ds.split(data, ds.SplitSpec(n_tr, n_te, seed))
    raise ValueError(f"unknown dataset id {kind!r}")


@functools.lru_cache(maxsize=4)
def _cached_dataset(spec_json):
    return resolve_dataset(json.loads(spec_json))


# --- sweep records ------------------------------------------------------

@dataclass
class RunRecord:
    run_id: str
    config_id: str
    seed: int
    test_acc: float
    g: tuple            # per weighted layer: mean gain G_1..G_L
    g_agg: float        # sum of layer means over the sweep's layer range
    s: tuple            # per weighted layer: mean fitness S_1..S_L
    outlier: bool = False
    act_rates: tuple | None = None  # per-layer mean node activity, not serialized


@dataclass(frozen=True)
class SweepSpec:
    arch: str
    dataset: dict
    configs: tuple
    runs_per_config: int
    metric: MetricConfig = field(default_factory=MetricConfig)
    seed: int = 0
    eval_batch: int = 2000
    layer_range: tuple | None = None  # default 1..L-1

    def __post_init__(self):
        if len(self.configs) < 1 or self.runs_per_config < 1:
            raise ValueError("sweep needs at least one config and one repetition")

    def to_dict(self):
        return {
            "arch": self.arch,
            "dataset": dict(self.dataset),
            "configs": [c.to_dict() for c in self.configs],
            "runs_per_config": self.runs_per_config,
            "metric": {
                "low_input_threshold": self.metric.low_input_threshold,
                "apply_max_scaling": self.metric.apply_max_scaling,
                "apply_softmax_centering": self.metric.apply_softmax_centering,
                "weighted_mean": self.metric.weighted_mean,
            },
            "seed": self.seed,
            "eval_batch": self.eval_batch,
            "layer_range": list(self.layer_range) if self.layer_range else None,
        }

    @classmethod
    def from_dict(cls, d):
        met = d.get("metric", {})
        lr = d.get("layer_range")
        return cls(
            arch=d["arch"],
            dataset=d["dataset"],
            configs=tuple(TrainConfig.from_dict(c) for c in d["configs"]),
            runs_per_config=d["runs_per_config"],
            metric=MetricConfig(
                low_input_threshold=met.get("low_input_threshold", 0.01),
                apply_max_scaling=met.get("apply_max_scaling", True),
                apply_softmax_centering=met.get("apply_softmax_centering", True),
                weighted_mean=met.get("weighted_mean", True),
            ),
            seed=d.get("seed", 0),
            eval_batch=d.get("eval_batch", 2000),
            layer_range=tuple(lr) if lr else None,
        )


@dataclass
class SweepResult:
    records: list
    failures: list  # (run_id, message) for diverged runs


def _run_seed(sweep_seed, config_index, rep):
    ss = np.random.SeedSequence(entropy=sweep_seed, spawn_key=(config_index, rep))
    return int(ss.generate_state(1, np.uint64)[0])


def _execute_run(payload):
    (arch, dataset_json, cfg, run_id, run_seed, metric, eval_batch, layer_range) = payload
    train_data, test_data = _cached_dataset(dataset_json)
    net = build_architecture(arch, RngState(run_seed).derive(0))
    result = train(net, train_data, replace(cfg, seed=run_seed), test_data)
    eval_x = test_data.inputs[:eval_batch]
    merits = analyze_network(result.network, eval_x, metric)
    count = len(merits)
    rng_range = layer_range or ((1, count - 1) if count > 1 else (1, 1))
    m, n = rng_range
    picked = merits[m - 1 : n]
    g_agg = (
        float(sum(lm.mean_g for lm in picked))
        if all(lm.defined for lm in picked)
        else math.nan
    )
    acts = tuple(
        float(np.mean([nd.activity_weight for nd in lm.nodes])) if lm.nodes else math.nan
        for lm in merits
    )
    return RunRecord(
        run_id=run_id,
        config_id=cfg.label,
        seed=run_seed,
        test_acc=result.test_accuracy,
        g=tuple(lm.mean_g for lm in merits),
        g_agg=g_agg,
        s=tuple(lm.mean_s for lm in merits),
        act_rates=acts,
    )


def run_sweep(spec: SweepSpec, workers=1, progress=None) -> SweepResult:
    """Train and measure every (config, repetition) pair.

    Fully deterministic given spec.seed: every run's seed is derived from
    (sweep seed, config index, repetition), so results do not depend on
    scheduling. Diverged runs are recorded as failures and skipped.
    """
    dataset_json = json.dumps(spec.dataset, sort_keys=True)
    payloads = []
    for ci, cfg in enumerate(spec.configs):
        for rep in range(spec.runs_per_config):
            run_id = f"{ci:03d}_{cfg.label}_r{rep}"
            payloads.append(
                (spec.arch, dataset_json, cfg, run_id, _run_seed(spec.seed, ci, rep),
                 spec.metric, spec.eval_batch, spec.layer_range)
            )
    records, failures = [], []

    def _collect(payload, outcome, error):
        if error is not None:
            failures.append((payload[3], str(error)))
        else:
            records.append(outcome)
        if progress:
            progress(payload[3], error)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(p, pool.submit(_execute_run, p)) for p in payloads]
            for p, fut in futures:
                try:
                    _collect(p, fut.result(), None)
                except TrainingDiverged as e:
                    _collect(p, None, e)
    else:
        for p in payloads:
            try:
                _collect(p, _execute_run(p), None)
            except TrainingDiverged as e:
                _collect(p, None, e)
    records.sort(key=lambda r: r.run_id)
    failures.sort()
    return SweepResult(flag_outliers(records), failures)


# --- statistics ---------------------------------------------------------

def _pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise ValueError("correlation undefined for a constant sequence")
    return float(xc @ yc) / (sx * sy)


def spearman(x, y):
    """Rank correlation with average-rank ties; two-sided t-approx p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two equal-length 1-D sequences")
    n = x.size
    if n < 3:
        raise ValueError("spearman needs at least 3 points")
    rho = _pearson(
        _sstats.rankdata(x, method="average"), _sstats.rankdata(y, method="average")
    )
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(_sstats.t.sf(abs(t), n - 2))
    return rho, min(p, 1.0)


def r_squared(x, y):
    """Squared Pearson correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("r_squared needs two equal-length sequences of >= 3 points")
    return _pearson(x, y) ** 2


def flag_outliers(records):
    """Flag runs whose penultimate-layer mean activation rate exceeds 0.9.

    Records parsed from CSV carry no activation rates and keep their
    stored flag.
    """
    out = []
    for r in records:
        flag = r.outlier
        if r.act_rates is not None and len(r.act_rates) >= 2:
            rate = r.act_rates[-2]
            flag = bool(np.isfinite(rate) and rate > OUTLIER_ACTIVATION_RATE)
        out.append(replace(r, outlier=flag))
    return out


@dataclass
class CorrelationSummary:
    params: dict        # name -> {"rho", "p", "r2", "n", "n_r2"}
    n_records: int
    n_outliers: int
    layer_count: int

    def to_dict(self):
        return {
            "n_records": self.n_records,
            "n_outliers": self.n_outliers,
            "layer_count": self.layer_count,
            "params": self.params,
        }


def _param_values(records, name):
    if name == "g_agg":
        return np.array([r.g_agg for r in records])
    idx = int(name.split("_")[1]) - 1
    return np.array([r.g[idx] for r in records])


def summarize(records) -> CorrelationSummary:
    """Correlation of every G parameter (and the aggregate) with accuracy.

    rho/p use all usable records; r^2 excludes flagged outliers, matching
    how the figures are usually reported.
    """
    records = list(records)
    if len(records) < 10:
        raise ValueError(f"need at least 10 records for statistics, got {len(records)}")
    layer_count = len(records[0].g)
    names = [f"g_{i + 1}" for i in range(layer_count)] + ["g_agg"]
    acc = np.array([r.test_acc for r in records])
    outlier = np.array([r.outlier for r in records])
    params = {}
    for name in names:
        vals = _param_values(records, name)
        ok = np.isfinite(vals)
        entry = {"rho": math.nan, "p": math.nan, "r2": math.nan,
                 "n": int(ok.sum()), "n_r2": 0}
        try:
            entry["rho"], entry["p"] = spearman(vals[ok], acc[ok])
        except ValueError:
            pass
        keep = ok & ~outlier
        entry["n_r2"] = int(keep.sum())
        try:
            entry["r2"] = r_squared(vals[keep], acc[keep])
        except ValueError:
            pass
        params[name] = entry
    return CorrelationSummary(
        params=params,
        n_records=len(records),
        n_outliers=int(outlier.sum()),
        layer_count=layer_count,
    )


# --- report files -------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fit_line(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0:
        return math.nan, math.nan
    slope = float(xc @ (y - y.mean())) / denom
    return slope, float(y.mean() - slope * x.mean())


def records_csv_text(records):
    layer_count = len(records[0].g)
    cols = (
        ["run_id", "config_id", "seed", "test_acc"]
        + [f"g_{i + 1}" for i in range(layer_count)]
        + ["g_agg"]
        + [f"s_{i + 1}" for i in range(layer_count)]
        + ["outlier_flag"]
    )
    lines = [",".join(cols)]
    for r in records:
        row = (
            [r.run_id, r.config_id, str(r.seed), _fmt(r.test_acc)]
            + [_fmt(v) for v in r.g]
            + [_fmt(r.g_agg)]
            + [_fmt(v) for v in r.s]
            + ["1" if r.outlier else "0"]
        )
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def parse_records_csv(path):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    header = lines[0].split(",")
    layer_count = sum(1 for c in header if c.startswith("g_") and c != "g_agg")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row = dict(zip(header, parts))
        records.append(
            RunRecord(
                run_id=row["run_id"],
                config_id=row["config_id"],
                seed=int(row["seed"]),
                test_acc=float(row["test_acc"]),
                g=tuple(float(row[f"g_{i + 1}"]) for i in range(layer_count)),
                g_agg=float(row["g_agg"]),
                s=tuple(float(row[f"s_{i + 1}"]) for i in range(layer_count)),
                outlier=row["outlier_flag"] == "1",
            )
        )
    return records


def emit_report(summary: CorrelationSummary, records, out_dir, failures=()):
    """Write records.csv, summary.json, and per-parameter scatter files.

    Scatter files are two-column CSVs (parameter value, test accuracy);
    their least-squares fit coefficients go into summary.json. Returns
    the list of paths written.
    """
    records = sorted(records, key=lambda r: r.run_id)
    if not records:
        raise ValueError("emit_report needs a non-empty record collection")
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    rec_path = os.path.join(out_dir, "records.csv")
    with open(rec_path, "w") as f:
        f.write(records_csv_text(records))
    paths.append(rec_path)

    acc = np.array([r.test_acc for r in records])
    fits = {}
    for name in list(summary.params):
        vals = _param_values(records, name)
        ok = np.isfinite(vals)
        scatter_path = os.path.join(out_dir, f"scatter_{name}.csv")
        with open(scatter_path, "w") as f:
            f.write(f"{name},test_acc\n")
            for v, a in zip(vals[ok], acc[ok]):
                f.write(f"{_fmt(float(v))},{_fmt(float(a))}\n")
        paths.append(scatter_path)
        slope, intercept = _fit_line(vals[ok], acc[ok])
        fits[name] = {"slope": slope, "intercept": intercept}

    doc = summary.to_dict()
    doc["fit_lines"] = fits
    doc["failures"] = [list(f) for f in failures]
    sum_path = os.path.join(out_dir, "summary.json")
    with open(sum_path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    paths.append(sum_path)
    return paths


# --- default sweep grids ------------------------------------------------

def default_mnist_grid(epochs=8, batch_size=32, learning_rate=0.1):
    """Desk-scale regularization grid: plain SGD, two L2 strengths, two
    dropout rates, two input-noise levels. With 4 repetitions this gives
    the standard 28-run sweep."""
    mk = functools.partial(
        TrainConfig, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate
    )
    return (
        mk(regularizer="none"),
        mk(regularizer="l2", l2_lambda=1e-4),
        mk(regularizer="l2", l2_lambda=1e-3),
        mk(regularizer="dropout", dropout_rate=0.2),
        mk(regularizer="dropout", dropout_rate=0.5),
        mk(regularizer="input_noise", input_noise_sigma=0.1),
        mk(regularizer="input_noise", input_noise_sigma=0.3),
    )


def default_cifar_grid(epochs=10, batch_size=64, learning_rate=0.05):
    """Reduced CIFAR grid covering the same regimes plus augmentation."""
    mk = functools.partial(
        TrainConfig, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate
    )
    return (
        mk(regularizer="none"),
        mk(regularizer="l2", l2_lambda=1e-3),
        mk(regularizer="dropout", dropout_rate=0.4),
        mk(regularizer="input_noise", input_noise_sigma=0.1),
        mk(
            regularizer="none",
            augmentation=ds.AugmentSpec(shift_pixels=2, flip_horizontal=True),
            name="augment_shift2_flip",
        ),
        mk(regularizer="l2", l2_lambda=1e-4),
    )
