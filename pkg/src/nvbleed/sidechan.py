"""Side-channel fingerprinting over interconnect traces.

A *trace* is what one attacker VM records while a victim workload runs: a
sequence of samples, each carrying one value per channel.  Channels are the
spy GPU's per-slot receive counters (cumulative bytes, read at a fixed
cadence set by the counter read cost) plus a ``timing`` channel holding the
batch-mean measured duration of small probe transfers issued on an absolute
time grid inside each sample interval.  Counters are stored cumulatively so
that decimating a trace is physically exact: the delta across kept samples
equals the sum of the dropped ones.

Traces are turned into fixed-width windows of 12 order/dispersion statistics
per channel, classified with a small exact k-nearest-neighbour model, and
scored with macro-averaged precision/recall/F1.  A trace's predicted class is
the majority vote over its windows.

Three collection scenarios are built in:

* ``apps18`` — 18 GPU applications (molecular-dynamics signatures and
  data-parallel DNN training jobs) time-shared on one link; the spy probes
  and reads its own counters.
* ``characters50`` — 50 rendering workloads ("characters") on a two-GPU
  node; class identity is carried by burst geometry and byte totals.
* ``cross_vm`` — victim and spy in different VMs on a 4-GPU ring; the spy
  never touches the victim's link and relies on stray counter accrual.

``mitigation_sweep`` replays a collected corpus at reduced counter sampling
rates and with counters disabled entirely, quantifying how much each
mitigation buys.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

import numpy as np

from .engine import Engine, ReadCounters, RegisterProfiler, SimProcess, SleepUntil, Transfer
from .exceptions import AnalysisError, ValidationError
from .topo import CROSS_VM_SPLIT, build_topology, get_profile
from .util import substream
from . import workloads

__all__ = [
    "FEATURE_NAMES", "SCENARIOS", "MODES", "TIMING_CHANNEL", "PROBE_BYTES",
    "Trace", "window_stats", "sliding_features", "downsample",
    "KNNModel", "knn_fit", "knn_predict", "knn_regress",
    "macro_scores", "confusion_matrix", "r2_score",
    "log_compress", "standardize_fit", "standardize_apply", "fisher_weights",
    "collect_trace", "collect_scenario", "split_traces", "evaluate_traces",
    "fingerprint_experiment", "cross_vm_window_sweep", "mitigation_sweep",
]

#: Per-window, per-channel statistics, in feature-vector order.
FEATURE_NAMES = ("mean", "max", "min", "median", "std", "var", "range",
                 "sum", "count_am", "percent_25", "percent_75", "iqr_val")

SCENARIOS = ("apps18", "characters50", "cross_vm")
MODES = ("timing_only", "timing_plus_counters")

TIMING_CHANNEL = "timing"
RX_COUNTER = "nvlink_total_data_received"
#: Probe payload. Large enough that a contended probe overlaps a meaningful
#: span of a victim chunk transfer (so dilation scales with how busy the
#: link is, not just whether it is busy), small enough that probe traffic
#: stays around a percent of link capacity at the probing cadence.
PROBE_BYTES = 16384
DEFAULT_WINDOW = 200
DEFAULT_K = 5
DEFAULT_TRAIN_FRAC = 0.8

#: Per-scenario defaults: platform profile, GPU count, samples per trace,
#: probes per sample interval, and the feature window/stride (samples).
SCENARIO_DEFAULTS = {
    "apps18": {"profile": "gcp", "gpus": 2, "samples": 600,
               "probes_per_sample": 4, "window": 200, "stride": None},
    "characters50": {"profile": "gcp", "gpus": 2, "samples": 1600,
                     "probes_per_sample": 8, "window": 480, "stride": 160},
    "cross_vm": {"profile": "gcp", "gpus": 4, "samples": 2000,
                 "probes_per_sample": 4, "window": 200, "stride": None},
}

_GPUS_TO_PRESET = {2: "pair", 4: "ring4", 8: "ring8"}

# substream tags for per-trace seeds (distinct from the engine's own streams)
_SEED_ENGINE = 21
_SEED_VICTIM = 22


# -- window statistics -------------------------------------------------------------

def window_stats(values) -> np.ndarray:
    """The 12 statistics of one window, ordered as ``FEATURE_NAMES``.

    Variance/std are population (divide by n); percentiles use linear
    interpolation; ``count_am`` counts samples strictly above the mean.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ValidationError("window_stats expects a non-empty 1-D array")
    return _stats_2d(vals[None, :])[0]


def _stats_2d(win: np.ndarray) -> np.ndarray:
    """Rows of 12 statistics for a (n_windows, window) matrix."""
    mean = win.mean(axis=1)
    mx = win.max(axis=1)
    mn = win.min(axis=1)
    med = np.median(win, axis=1)
    var = win.var(axis=1)            # population variance
    std = np.sqrt(var)
    total = win.sum(axis=1)
    count_am = (win > mean[:, None]).sum(axis=1).astype(np.float64)
    p25 = np.percentile(win, 25, axis=1)
    p75 = np.percentile(win, 75, axis=1)
    return np.column_stack([mean, mx, mn, med, std, var, mx - mn, total,
                            count_am, p25, p75, p75 - p25])


# -- traces -----------------------------------------------------------------------

@dataclass
class Trace:
    """One attacker recording: aligned per-sample channel values.

    ``values`` holds raw recorded series: cumulative byte counts for slot
    channels, batch-mean probe durations (ns) for the timing channel.
    ``baseline`` is the cumulative counter state just before sample 0, so
    per-sample deltas are well defined for every sample.
    """

    scenario: str
    profile: str
    label: int
    class_name: str
    channels: tuple
    times_ns: np.ndarray
    values: dict
    baseline: dict
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(self.times_ns.shape[0])

    @property
    def counter_channels(self) -> tuple:
        return tuple(c for c in self.channels if c != TIMING_CHANNEL)

    def series(self, channel: str) -> np.ndarray:
        """Per-sample series for one channel (deltas for counter channels)."""
        if channel not in self.values:
            raise ValidationError(
                f"unknown channel {channel!r}; trace has {self.channels}")
        vals = self.values[channel]
        if channel == TIMING_CHANNEL:
            return vals
        return np.diff(vals, prepend=self.baseline[channel])

    def native_rate_hz(self) -> float:
        if self.n_samples < 2:
            raise AnalysisError("need at least 2 samples to estimate a rate")
        span = float(self.times_ns[-1] - self.times_ns[0])
        return (self.n_samples - 1) * 1e9 / span

    def rows(self):
        """Yield (time_ns, channel, value) sample rows in time order."""
        for i in range(self.n_samples):
            t = int(self.times_ns[i])
            for ch in self.channels:
                yield (t, ch, float(self.values[ch][i]))


def downsample(trace: Trace, target_rate_hz: float) -> Trace:
    """Decimate a trace to ``target_rate_hz`` by nearest-sample selection.

    Cumulative counter channels survive decimation exactly: the delta between
    kept samples is the sum of the dropped intervals.  Requesting the native
    rate returns an identical trace; requesting more is an error.
    """
    if target_rate_hz <= 0:
        raise ValidationError("target_rate_hz must be positive")
    native = trace.native_rate_hz()
    if target_rate_hz > native * (1 + 1e-9):
        raise ValidationError(
            f"target rate {target_rate_hz:.1f} Hz exceeds native "
            f"{native:.1f} Hz; decimation cannot invent samples")
    times = trace.times_ns.astype(np.float64)
    period = 1e9 / target_rate_hz
    n_out = max(1, int(np.floor((times[-1] - times[0]) / period)) + 1)
    grid = times[0] + period * np.arange(n_out)
    idx = np.searchsorted(times, grid)
    idx = np.clip(idx, 0, len(times) - 1)
    left = np.clip(idx - 1, 0, len(times) - 1)
    take_left = np.abs(times[left] - grid) <= np.abs(times[idx] - grid)
    idx = np.where(take_left, left, idx)
    idx = np.unique(idx)
    return Trace(
        scenario=trace.scenario, profile=trace.profile, label=trace.label,
        class_name=trace.class_name, channels=trace.channels,
        times_ns=trace.times_ns[idx],
        values={ch: v[idx] for ch, v in trace.values.items()},
        baseline=dict(trace.baseline),
        meta={**trace.meta, "downsampled_hz": target_rate_hz},
    )


def sliding_features(trace: Trace, window: int, stride: int | None = None,
                     channels=None):
    """Window statistics for one trace.

    Returns ``(X, names)`` where ``X`` has one row per window and
    ``len(channels) * 12`` columns, channel-major, and ``names`` are the
    ``"channel:stat"`` column labels.  The stride defaults to the window
    length (non-overlapping windows).
    """
    if window < 2:
        raise ValidationError("window must be at least 2 samples")
    stride = window if stride is None else stride
    if stride < 1:
        raise ValidationError("stride must be at least 1 sample")
    chans = tuple(channels) if channels is not None else trace.channels
    for ch in chans:
        if ch not in trace.values:
            raise ValidationError(
                f"unknown channel {ch!r}; trace has {trace.channels}")
    n = trace.n_samples
    if n < window:
        raise ValidationError(
            f"trace has {n} samples; cannot cut a {window}-sample window")
    starts = np.arange(0, n - window + 1, stride)
    blocks = []
    for ch in chans:
        series = trace.series(ch)
        wins = np.stack([series[s:s + window] for s in starts])
        blocks.append(_stats_2d(wins))
    names = [f"{ch}:{stat}" for ch in chans for stat in FEATURE_NAMES]
    return np.hstack(blocks), names


# -- k-nearest-neighbour classifier -------------------------------------------------

@dataclass
class KNNModel:
    x: np.ndarray
    y: np.ndarray
    k: int


def knn_fit(train_x, train_y, k: int = DEFAULT_K) -> KNNModel:
    x = np.asarray(train_x, dtype=np.float64)
    y = np.asarray(train_y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("training features must be a non-empty 2-D array")
    if y.shape[0] != x.shape[0]:
        raise ValidationError(
            f"{x.shape[0]} feature rows but {y.shape[0]} labels")
    if not 1 <= k <= x.shape[0]:
        raise ValidationError(
            f"k={k} out of range for {x.shape[0]} training rows")
    return KNNModel(x=x, y=y, k=k)


def _neighbors(model: KNNModel, q: np.ndarray):
    d = np.square(model.x - q).sum(axis=1)
    order = np.argsort(d, kind="stable")[:model.k]
    return order, d[order]


def _neighbors_batch(model: KNNModel, q: np.ndarray):
    """Per-query (indices, distances) for many queries at once.

    Uses a matmul-expanded distance only to shortlist candidates, then
    re-ranks the shortlist with the exact squared-difference metric so the
    neighbour order matches the single-query path bit for bit.
    """
    n = model.x.shape[0]
    cand = min(n, max(64, 4 * model.k))
    x_sq = np.square(model.x).sum(axis=1)
    out = []
    for start in range(0, q.shape[0], 256):
        block = q[start:start + 256]
        approx = x_sq[None, :] - 2.0 * (block @ model.x.T) \
            + np.square(block).sum(axis=1)[:, None]
        short = np.argpartition(approx, cand - 1, axis=1)[:, :cand]
        for j, row in enumerate(block):
            ids = np.sort(short[j])
            d = np.square(model.x[ids] - row).sum(axis=1)
            local = np.argsort(d, kind="stable")[:model.k]
            out.append((ids[local], d[local]))
    return out


def knn_predict(model: KNNModel, queries):
    """Predicted label per query row.

    Majority vote over the k nearest training rows (L2); ties break by the
    smaller summed distance, then the lower label.
    """
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != model.x.shape[1]:
        raise ValidationError(
            f"query dimension {q.shape[-1] if q.ndim else '?'} != "
            f"model dimension {model.x.shape[1]}")
    if q.shape[0] * model.x.shape[0] > 1_000_000:
        pairs = _neighbors_batch(model, q)
    else:
        pairs = (_neighbors(model, row) for row in q)
    out = []
    for idx, dist in pairs:
        votes = {}
        for i, d in zip(idx, dist):
            label = model.y[i]
            cnt, tot = votes.get(label, (0, 0.0))
            votes[label] = (cnt + 1, tot + d)
        best = sorted(votes.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[0]))
        out.append(best[0][0])
    result = np.asarray(out)
    return result[0] if single else result


def knn_regress(train_x, train_y, queries, k: int = DEFAULT_K) -> np.ndarray:
    """Mean target of the k nearest training rows, per query row."""
    targets = np.asarray(train_y, dtype=np.float64)
    model = knn_fit(train_x, targets, k)
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.shape[1] != model.x.shape[1]:
        raise ValidationError(
            f"query dimension {q.shape[1]} != model dimension {model.x.shape[1]}")
    out = np.empty(q.shape[0])
    for j, row in enumerate(q):
        idx, _ = _neighbors(model, row)
        out[j] = model.y[idx].mean()
    return float(out[0]) if single else out


# -- metrics ------------------------------------------------------------------------

def macro_scores(y_true, y_pred) -> dict:
    """Macro-averaged precision/recall/F1 over the union of observed labels."""
    yt = list(y_true)
    yp = list(y_pred)
    if not yt or len(yt) != len(yp):
        raise ValidationError("y_true and y_pred must be equal-length, non-empty")
    labels = sorted(set(yt) | set(yp))
    precs, recs, f1s = [], [], []
    for c in labels:
        tp = sum(1 for t, p in zip(yt, yp) if t == c and p == c)
        fp = sum(1 for t, p in zip(yt, yp) if t != c and p == c)
        fn = sum(1 for t, p in zip(yt, yp) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        precs.append(prec)
        recs.append(rec)
    n = len(labels)
    return {"precision": sum(precs) / n, "recall": sum(recs) / n,
            "f1": sum(f1s) / n}


def confusion_matrix(y_true, y_pred, labels=None):
    """``(labels, matrix)`` with matrix[i][j] = count(true=i, predicted=j)."""
    yt = list(y_true)
    yp = list(y_pred)
    if len(yt) != len(yp):
        raise ValidationError("y_true and y_pred must be equal length")
    if labels is None:
        labels = sorted(set(yt) | set(yp))
    labels = list(labels)
    index = {c: i for i, c in enumerate(labels)}
    mat = [[0] * len(labels) for _ in labels]
    for t, p in zip(yt, yp):
        mat[index[t]][index[p]] += 1
    return labels, mat


def r2_score(y_true, y_pred) -> float:
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.size == 0 or yt.shape != yp.shape:
        raise ValidationError("y_true and y_pred must be equal-shape, non-empty")
    ss_tot = float(np.square(yt - yt.mean()).sum())
    if ss_tot == 0:
        raise AnalysisError("R^2 undefined: targets are constant")
    ss_res = float(np.square(yt - yp).sum())
    return 1.0 - ss_res / ss_tot


def log_compress(x: np.ndarray) -> np.ndarray:
    """Signed ``log1p``, elementwise: ``sign(x) * log1p(|x|)``.

    Window statistics of byte counts span several orders of magnitude
    between heavy and light workload classes.  Standardizing the raw values
    leaves the light classes packed into a sliver of each feature's range,
    where their differences drown in other features' noise; compressing
    magnitudes first keeps same-scale classes separable without disturbing
    ordering or sign.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def standardize_fit(x: np.ndarray):
    """Column means and deviations for feature scaling (zero spread -> 1)."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return mu, sd


def standardize_apply(x: np.ndarray, mu, sd) -> np.ndarray:
    return (x - mu) / sd


def fisher_weights(x: np.ndarray, y) -> np.ndarray:
    """Per-feature relevance weights from between/within-class variance.

    ``w = sqrt(r / (1 + r))`` with ``r`` the Fisher ratio, so features whose
    class means coincide (pure measurement noise) contribute ~nothing to KNN
    distances while well-separated features keep full weight.  Computed on
    training data only.
    """
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValidationError("features and labels must align and be non-empty")
    grand = x.mean(axis=0)
    n = x.shape[0]
    between = np.zeros(x.shape[1])
    within = np.zeros(x.shape[1])
    for c in np.unique(y):
        rows = x[y == c]
        frac = rows.shape[0] / n
        between += frac * np.square(rows.mean(axis=0) - grand)
        within += frac * rows.var(axis=0)
    ratio = between / (within + 1e-12)
    return np.sqrt(ratio / (1.0 + ratio))


# -- trace collection ----------------------------------------------------------------

def _reader_program(gpu: int, n_reads: int, record: list):
    def program(ctx):
        yield RegisterProfiler(gpu)
        for _ in range(n_reads):
            issued = ctx.now_ns
            snap = yield ReadCounters(gpu, aggregation=False, names=(RX_COUNTER,))
            record.append((issued, snap.vector(RX_COUNTER)))
    return SimProcess(gpu=gpu, program=program, name="spy-reader")


def _probe_program(spy_gpu: int, peer: int, period_ns: int, record: list):
    def program(ctx):
        k = 0
        while True:
            yield SleepUntil(k * period_ns)
            res = yield Transfer(peer, spy_gpu, PROBE_BYTES, kind="probe")
            record.append((ctx.now_ns, res.measured_ns))
            k += 1
    return SimProcess(gpu=spy_gpu, program=program, name="spy-prober")


def collect_trace(scenario: str, topology, victim_spec, victim_src: int,
                  victim_dst: int, spy_gpu: int, probe_peer: int, *,
                  label: int, class_name: str, samples: int,
                  probes_per_sample: int, engine_seed: int,
                  counters_enabled: bool = True,
                  cross_vm_alpha: float | None = None,
                  cross_vm_rel_sigma: float | None = None,
                  measurement_noise: bool = True) -> Trace:
    """Run one victim against the two-process spy and return the recording.

    The reader process free-runs counter reads: each read costs exactly the
    profile's read cost, so issue instants form an exact grid that defines
    the sample boundaries.  The prober fires on an absolute grid of
    ``read_cost / probes_per_sample``, giving every sample interval the same
    number of probes regardless of contention.  With counters disabled the
    reader is dropped and the same grid is applied synthetically, so the
    timing channel is directly comparable between the two arms.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    if probes_per_sample < 1:
        raise ValidationError("probes_per_sample must be >= 1")
    profile = topology.profile
    read_ns = round(profile.counter_read_cost_ns)
    probe_period = max(1, read_ns // probes_per_sample)

    reads: list = []
    probes: list = []
    procs = []
    if counters_enabled:
        procs.append(_reader_program(spy_gpu, samples + 1, reads))
    procs.append(_probe_program(spy_gpu, probe_peer, probe_period, probes))
    procs.append(workloads.workload_process(victim_spec, victim_src, victim_dst))

    alpha = 0.0 if cross_vm_alpha is None else cross_vm_alpha
    extra = {}
    if cross_vm_rel_sigma is not None:
        extra["cross_vm_rel_sigma"] = cross_vm_rel_sigma
    engine = Engine(topology, engine_seed, counters_enabled=counters_enabled,
                    measurement_noise=measurement_noise,
                    cross_vm_alpha=alpha, log_events=False, **extra)
    for p in procs:
        engine.add_process(p)
    horizon_ns = (samples + 2) * read_ns + 2_000_000
    engine.run(horizon_ns / 1e9)

    if counters_enabled:
        if len(reads) < samples + 1:
            raise AnalysisError(
                f"collection fell short: {len(reads)}/{samples + 1} counter reads")
        grid = np.asarray([t for t, _ in reads[:samples + 1]], dtype=np.int64)
        cums = np.asarray([v for _, v in reads[:samples + 1]], dtype=np.float64)
    else:
        grid = np.arange(samples + 1, dtype=np.int64) * read_ns
        cums = None

    # mean measured probe duration per sample interval (grid[i], grid[i+1]]
    ends = np.asarray([t for t, _ in probes], dtype=np.int64)
    meas = np.asarray([m for _, m in probes], dtype=np.float64)
    timing = np.empty(samples, dtype=np.float64)
    lo = np.searchsorted(ends, grid[:-1], side="right")
    hi = np.searchsorted(ends, grid[1:], side="right")
    fallback = profile.probe_overhead_ns
    for i in range(samples):
        timing[i] = meas[lo[i]:hi[i]].mean() if hi[i] > lo[i] else fallback
        fallback = timing[i]

    channels: list = []
    values: dict = {}
    baseline: dict = {}
    if cums is not None:
        for slot in range(cums.shape[1]):
            name = f"slot{slot}"
            channels.append(name)
            values[name] = cums[1:, slot].copy()
            baseline[name] = float(cums[0, slot])
    channels.append(TIMING_CHANNEL)
    values[TIMING_CHANNEL] = timing
    # Sample i covers (grid[i], grid[i+1]]: counters were captured at
    # grid[i+1] (the next read's issue instant), probes bucketed the same way.
    times = grid[1:].copy()
    return Trace(
        scenario=scenario, profile=profile.name, label=label,
        class_name=class_name, channels=tuple(channels), times_ns=times,
        values=values, baseline=baseline,
        meta={"engine_seed": engine_seed, "victim": victim_spec.name,
              "victim_seed": victim_spec.seed, "samples": samples,
              "probes_per_sample": probes_per_sample,
              "probe_period_ns": probe_period,
              "counters_enabled": counters_enabled, "cross_vm_alpha": alpha},
    )


# -- scenarios -----------------------------------------------------------------------

def _scenario_setup(scenario: str, profile_name: str | None, gpus: int | None):
    """Resolve topology, spy/victim placement and the class list."""
    if scenario not in SCENARIOS:
        raise ValidationError(
            f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    cfg = SCENARIO_DEFAULTS[scenario]
    profile = get_profile(profile_name or cfg["profile"])
    gpus = cfg["gpus"] if gpus is None else gpus

    if scenario == "cross_vm":
        if gpus != 4:
            raise ValidationError("cross_vm runs on the 4-GPU ring")
        topology = build_topology("ring4", profile, vm_assignment=CROSS_VM_SPLIT)
        placement = {"victim_src": 0, "victim_dst": 1, "spy_gpu": 2,
                     "probe_peer": 3}
    else:
        if scenario == "characters50" and gpus != 2:
            raise ValidationError(
                "characters50 renders across exactly two GPUs")
        if gpus not in _GPUS_TO_PRESET:
            raise ValidationError(
                f"gpus must be one of {sorted(_GPUS_TO_PRESET)}, got {gpus}")
        topology = build_topology(_GPUS_TO_PRESET[gpus], profile)
        placement = {"victim_src": 1, "victim_dst": 0, "spy_gpu": 0,
                     "probe_peer": 1}

    if scenario == "apps18":
        class_names = list(workloads.APP_PRESETS)
    else:
        class_names = [f"char{i:02d}" for i in range(workloads.N_CHARACTERS)]
    return topology, placement, class_names


def _victim_spec(scenario: str, class_index: int, class_name: str,
                 victim_seed: int, horizon_ns: int):
    if scenario == "apps18":
        return workloads.gen_app_signature(class_name, seed=victim_seed)
    period = workloads.character_profile(class_index)["period_ns"]
    frames = int(horizon_ns / period) + 3
    return workloads.gen_blender_character(class_index, frames=frames,
                                           seed=victim_seed)


def collect_scenario(scenario: str, *, profile: str | None = None,
                     gpus: int | None = None, traces_per_class: int = 50,
                     samples: int | None = None, probes_per_sample: int | None = None,
                     seed: int = 0, classes=None, counters_enabled: bool = True,
                     cross_vm_alpha: float | None = None,
                     cross_vm_rel_sigma: float | None = None,
                     measurement_noise: bool = True) -> list:
    """Collect the full trace corpus for one scenario.

    ``classes`` restricts to the first N classes (int) or an explicit list of
    class indices — useful for quick runs; experiments default to all.
    """
    if traces_per_class < 1:
        raise ValidationError("traces_per_class must be >= 1")
    cfg = SCENARIO_DEFAULTS[scenario] if scenario in SCENARIO_DEFAULTS else None
    topology, placement, class_names = _scenario_setup(scenario, profile, gpus)
    samples = cfg["samples"] if samples is None else samples
    probes = cfg["probes_per_sample"] if probes_per_sample is None else probes_per_sample
    if scenario == "cross_vm" and cross_vm_alpha is None:
        cross_vm_alpha = Engine(topology, 0, log_events=False).cross_vm_alpha

    if classes is None:
        class_ids = list(range(len(class_names)))
    elif isinstance(classes, int):
        class_ids = list(range(min(classes, len(class_names))))
    else:
        class_ids = list(classes)
    read_ns = round(topology.profile.counter_read_cost_ns)
    horizon_ns = (samples + 2) * read_ns + 2_000_000

    traces = []
    for ci in class_ids:
        name = class_names[ci]
        for t in range(traces_per_class):
            eng_seed = int(substream(seed, _SEED_ENGINE, ci, t).integers(0, 2**63))
            vic_seed = int(substream(seed, _SEED_VICTIM, ci, t).integers(0, 2**63))
            spec = _victim_spec(scenario, ci, name, vic_seed, horizon_ns)
            tr = collect_trace(
                scenario, topology, spec, placement["victim_src"],
                placement["victim_dst"], placement["spy_gpu"],
                placement["probe_peer"], label=ci, class_name=name,
                samples=samples, probes_per_sample=probes,
                engine_seed=eng_seed, counters_enabled=counters_enabled,
                cross_vm_alpha=cross_vm_alpha,
                cross_vm_rel_sigma=cross_vm_rel_sigma,
                measurement_noise=measurement_noise)
            tr.meta["trace_index"] = t
            traces.append(tr)
    return traces


def split_traces(traces, train_frac: float = DEFAULT_TRAIN_FRAC):
    """Per-class split by trace index: first ``train_frac`` train, rest test."""
    if not 0 < train_frac < 1:
        raise ValidationError("train_frac must be in (0, 1)")
    by_class = collections.defaultdict(list)
    for tr in traces:
        by_class[tr.label].append(tr)
    train, test = [], []
    for label in sorted(by_class):
        group = sorted(by_class[label], key=lambda t: t.meta.get("trace_index", 0))
        n_train = int(round(train_frac * len(group)))
        if not 1 <= n_train < len(group):
            raise ValidationError(
                f"class {label} has {len(group)} traces; cannot split "
                f"{train_frac:.0%}/{1 - train_frac:.0%}")
        train.extend(group[:n_train])
        test.extend(group[n_train:])
    return train, test


def _mode_channels(trace: Trace, mode: str):
    if mode == "timing_only":
        return (TIMING_CHANNEL,)
    if mode == "timing_plus_counters":
        if not trace.counter_channels:
            raise ValidationError(
                "trace has no counter channels (collected with counters "
                "disabled); only timing_only applies")
        return trace.channels
    raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")


def evaluate_traces(traces, *, window: int = DEFAULT_WINDOW,
                    mode: str = "timing_plus_counters", k: int = DEFAULT_K,
                    train_frac: float = DEFAULT_TRAIN_FRAC,
                    stride: int | None = None,
                    train_stride: int | None = None) -> dict:
    """Train/test one ablation mode on a trace corpus and score it.

    Features are log-compressed, then standardized on the training windows;
    each test trace is classified by majority vote (ties to the lower label)
    over its windows.  ``train_stride`` lets training windows overlap more
    densely than test windows (a larger reference library from the same
    recordings) without changing what one test decision sees.
    """
    if not traces:
        raise ValidationError("no traces to evaluate")
    train, test = split_traces(traces, train_frac)
    chans = _mode_channels(traces[0], mode)

    def featurize(group, use_stride):
        rows, labels, owners = [], [], []
        for i, tr in enumerate(group):
            x, _ = sliding_features(tr, window, stride=use_stride,
                                    channels=chans)
            rows.append(x)
            labels.extend([tr.label] * x.shape[0])
            owners.extend([i] * x.shape[0])
        return np.vstack(rows), np.asarray(labels), np.asarray(owners)

    x_train, y_train, _ = featurize(train, train_stride or stride)
    x_test, y_test, owner = featurize(test, stride)
    x_train = log_compress(x_train)
    x_test = log_compress(x_test)
    mu, sd = standardize_fit(x_train)
    x_train = standardize_apply(x_train, mu, sd)
    x_test = standardize_apply(x_test, mu, sd)
    w = fisher_weights(x_train, y_train)
    model = knn_fit(x_train * w, y_train, k)
    pred_rows = knn_predict(model, x_test * w)

    trace_true, trace_pred = [], []
    for i, tr in enumerate(test):
        votes = collections.Counter(int(p) for p in pred_rows[owner == i])
        best = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        trace_true.append(tr.label)
        trace_pred.append(best)

    scores = macro_scores(trace_true, trace_pred)
    window_scores = macro_scores([int(v) for v in y_test],
                                 [int(v) for v in pred_rows])
    labels, mat = confusion_matrix(
        trace_true, trace_pred, labels=sorted({t.label for t in traces}))
    name_of = {t.label: t.class_name for t in traces}
    return {
        "mode": mode, "window": window, "k": k,
        "n_train_traces": len(train), "n_test_traces": len(test),
        "n_train_windows": int(x_train.shape[0]),
        "n_test_windows": int(x_test.shape[0]),
        "f1": scores["f1"], "precision": scores["precision"],
        "recall": scores["recall"], "window_f1": window_scores["f1"],
        "window_precision": window_scores["precision"],
        "window_recall": window_scores["recall"],
        "confusion": {"labels": [name_of.get(c, str(c)) for c in labels],
                      "matrix": mat},
    }


def fingerprint_experiment(scenario: str, *, profile: str | None = None,
                           gpus: int | None = None, traces_per_class: int = 50,
                           window: int | None = None, k: int = DEFAULT_K,
                           seed: int = 0, modes=MODES,
                           samples: int | None = None,
                           probes_per_sample: int | None = None,
                           stride: int | None = None,
                           train_frac: float = DEFAULT_TRAIN_FRAC,
                           classes=None, counters_enabled: bool = True,
                           cross_vm_alpha: float | None = None,
                           traces=None) -> dict:
    """Collect (or reuse) a corpus and score every ablation mode on it."""
    cfg = SCENARIO_DEFAULTS.get(scenario, {})
    if window is None:
        window = cfg.get("window", DEFAULT_WINDOW)
    if stride is None:
        stride = cfg.get("stride")
    if traces is None:
        traces = collect_scenario(
            scenario, profile=profile, gpus=gpus,
            traces_per_class=traces_per_class, samples=samples,
            probes_per_sample=probes_per_sample, seed=seed, classes=classes,
            counters_enabled=counters_enabled, cross_vm_alpha=cross_vm_alpha)
    if not counters_enabled or not traces[0].counter_channels:
        modes = ("timing_only",)
    report = {
        "scenario": scenario, "profile": traces[0].profile,
        "n_classes": len({t.label for t in traces}),
        "traces_per_class": len(traces) // max(1, len({t.label for t in traces})),
        "samples": traces[0].n_samples, "window": window, "stride": stride,
        "k": k, "seed": seed, "modes": {},
    }
    if scenario == "cross_vm":
        report["cross_vm_alpha"] = traces[0].meta.get("cross_vm_alpha")
    for mode in modes:
        report["modes"][mode] = evaluate_traces(
            traces, window=window, mode=mode, k=k, train_frac=train_frac,
            stride=stride)
    return report


def cross_vm_window_sweep(windows=(100, 250, 500, 1000), *,
                          alpha: float | None = None,
                          traces_per_class: int = 50,
                          samples: int | None = None, seed: int = 0,
                          k: int = DEFAULT_K, classes=None,
                          train_frac: float = DEFAULT_TRAIN_FRAC,
                          train_stride: int | None = 50,
                          traces=None) -> dict:
    """Score the cross-VM observer at several window lengths on one corpus.

    Each row scores individual windows (one decision per window) so that
    window length is the only thing varying between rows; per-trace majority
    votes would mix window length with vote count.  Training windows slide
    at ``train_stride`` samples to build a dense reference library from the
    same recordings.
    """
    if traces is None:
        traces = collect_scenario(
            "cross_vm", traces_per_class=traces_per_class, samples=samples,
            seed=seed, classes=classes, cross_vm_alpha=alpha)
    rows = []
    for w in windows:
        rep = evaluate_traces(traces, window=w, mode="timing_plus_counters",
                              k=k, train_frac=train_frac,
                              train_stride=train_stride)
        rows.append({"window": w, "f1": rep["window_f1"],
                     "precision": rep["window_precision"],
                     "recall": rep["window_recall"],
                     "trace_f1": rep["f1"]})
    return {
        "scenario": "cross_vm",
        "cross_vm_alpha": traces[0].meta.get("cross_vm_alpha"),
        "n_classes": len({t.label for t in traces}),
        "k": k, "seed": seed, "rows": rows,
    }


def mitigation_sweep(traces=None, *, divisors=(1, 2, 4, 8),
                     window: int = DEFAULT_WINDOW, k: int = DEFAULT_K,
                     seed: int = 0, traces_per_class: int = 50,
                     samples: int | None = None, classes=None,
                     disabled_samples: int | None = None,
                     include_disabled_arm: bool = True,
                     train_frac: float = DEFAULT_TRAIN_FRAC) -> dict:
    """Fingerprinting quality vs counter-rate limiting and counter shutoff.

    Reuses one characters50 corpus, decimating each trace's cumulative
    counters (and timing samples) to ``native_rate / divisor`` before
    featurizing.  Sweep rows share one small ``window`` so even the most
    decimated traces still hold a full window.  The shutoff arm is a fresh
    timing-only collection because disabling counters changes what the
    attacker can record at all; it is scored with the scenario's standard
    window geometry, since nothing is decimated there.
    """
    if traces is None:
        traces = collect_scenario(
            "characters50", traces_per_class=traces_per_class,
            samples=samples, seed=seed, classes=classes)
    native = min(t.native_rate_hz() for t in traces)
    rows = []
    for div in sorted(divisors):
        if div < 1:
            raise ValidationError("rate divisors must be >= 1")
        if div == 1:
            reduced = traces
        else:
            reduced = [downsample(t, native / div) for t in traces]
        rep = evaluate_traces(reduced, window=window,
                              mode="timing_plus_counters", k=k,
                              train_frac=train_frac)
        rows.append({"divisor": div, "rate_hz": native / div,
                     "f1": rep["f1"], "precision": rep["precision"],
                     "recall": rep["recall"]})
    report = {
        "scenario": "characters50", "window": window, "k": k, "seed": seed,
        "native_rate_hz": native, "rows": rows,
    }
    if include_disabled_arm:
        cfg = SCENARIO_DEFAULTS["characters50"]
        class_ids = sorted({t.label for t in traces})
        per_class = len(traces) // len(class_ids)
        n_samples = cfg["samples"] if disabled_samples is None else disabled_samples
        disabled = collect_scenario(
            "characters50", traces_per_class=per_class,
            samples=n_samples, seed=seed, classes=class_ids,
            counters_enabled=False)
        rep = evaluate_traces(disabled, window=cfg["window"],
                              stride=cfg["stride"], mode="timing_only",
                              k=k, train_frac=train_frac)
        report["counters_disabled"] = {
            "samples": n_samples, "window": cfg["window"],
            "stride": cfg["stride"], "f1": rep["f1"],
            "precision": rep["precision"], "recall": rep["recall"],
        }
    return report
