"""DNN architecture extraction from model-parallel interconnect traffic.

A model-parallel victim ships every layer boundary's output tensor across the
link once per training iteration. From the transfer log an attacker can
segment iterations, recover per-boundary output sizes, classify each boundary
as FC / conv / pool, and enumerate the integer hyper-parameter combinations
consistent with each observed size:

    FC:    elements = N x batch
    conv:  elements = W_out^2 x C x batch,  W_out = (W_in - F + 2P)/S + 1
    pool:  elements = W_out^2 x C x batch,  W_out = (W_in - F)/S + 1

subject to S <= F <= floor(W_in/2) and P <= F with all divisions exact. The
enumeration narrows the search space; it is not a unique decoder.
"""

from __future__ import annotations

import collections
import dataclasses

import numpy as np

from . import topo, workloads
from .engine import Engine
from .exceptions import AnalysisError, ValidationError
from .sidechan import knn_fit, knn_predict, standardize_apply, standardize_fit
from .util import substream

ELEMENT_BYTES = workloads.ELEMENT_BYTES

#: An inter-transfer gap more than this multiple of the median gap ends an
#: iteration (the generator-side ratio is ~14x, so 3x has wide margin).
GAP_FACTOR = 3.0

LAYER_TYPES = ("fc", "conv", "pool")

#: How the channel factor C recovered from W^2 x C x batch is interpreted:
#: "map" leaves C free (channels of whatever feature map crossed the link);
#: "input" additionally pins C to the known input channel count, which is how
#: the traffic generator sizes conv/pool boundaries.
CHANNEL_CONVENTIONS = ("map", "input")


# -- observed traffic ---------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class TransferEvent:
    """One observed link transfer."""

    start_ns: int
    end_ns: int
    payload_bytes: int


@dataclasses.dataclass(frozen=True)
class LayerObservation:
    """One layer boundary recovered from the transfer log."""

    boundary_index: int
    transferred_bytes: int
    elements: int
    batch: int
    repeats: int = 1


def observation(boundary_index: int, transferred_bytes: int, batch: int,
                element_bytes: int = ELEMENT_BYTES,
                repeats: int = 1) -> LayerObservation:
    """Build a LayerObservation, checking the element-size invariant."""
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    if element_bytes < 1:
        raise ValidationError("element_bytes must be >= 1")
    if transferred_bytes < 1:
        raise ValidationError("transferred_bytes must be >= 1")
    elements, rem = divmod(transferred_bytes, element_bytes)
    if rem:
        raise ValidationError(
            f"boundary {boundary_index}: {transferred_bytes} bytes is not a "
            f"multiple of element_bytes={element_bytes}")
    return LayerObservation(boundary_index, transferred_bytes, elements,
                            batch, repeats)


def collect_model_trace(model, batch: int, iterations: int, *,
                        profile: str = "gcp", seed: int = 0,
                        input_spec: dict | None = None) -> list[TransferEvent]:
    """Simulate a model-parallel victim and return its link transfer log.

    ``model`` is a preset name (one of workloads.SIMPLE_MODELS), a compact
    recipe string, or a layer list.
    """
    if isinstance(model, str) and model in workloads.MODEL_PRESETS:
        spec = workloads.gen_model_preset(model, batch, iterations, seed=seed)
    else:
        spec = workloads.gen_model_parallel_dnn(
            model, batch, iterations, input_spec=input_spec, seed=seed)

    boundaries = spec.params["boundaries"]
    n_transfers = sum(r for _, r, _ in boundaries)
    per_iter = sum(r * (size + 200_000 + comp)
                   for size, r, comp in boundaries) + 1_000_000
    horizon_ns = iterations * per_iter * 2 + 5_000_000

    engine = Engine(topo.build_topology("pair", topo.get_profile(profile)), seed,
                    measurement_noise=False)
    engine.add_process(workloads.workload_process(spec, 1, 0))
    engine.run(horizon_ns / 1e9)

    events = []
    for time_ns, kind, _pid, payload in engine.log:
        if kind != "transfer" or "kind=uvm_access" not in payload:
            continue
        fields = dict(tok.split("=") for tok in payload.split())
        size = int(fields["bytes"])
        events.append(TransferEvent(time_ns, time_ns + int(fields["duration_ns"]), size))
    if len(events) != iterations * n_transfers:
        raise AnalysisError(
            f"expected {iterations * n_transfers} transfers, "
            f"observed {len(events)} (horizon too short?)")
    return events


# -- iteration segmentation ---------------------------------------------------------


def segment_iterations(events: list[TransferEvent], *,
                       gap_factor: float = GAP_FACTOR) -> list[tuple[int, int]]:
    """Split a transfer log into iteration spans (index ranges, end-exclusive).

    A new iteration starts wherever the idle gap between consecutive
    transfers exceeds ``gap_factor`` times the median gap. Uniform gaps
    (no iteration structure) yield a single span.
    """
    if len(events) < 2:
        raise ValidationError("need at least 2 transfers to segment")
    if gap_factor <= 0:
        raise ValidationError("gap_factor must be positive")
    starts = np.array([e.start_ns for e in events], dtype=np.float64)
    ends = np.array([e.end_ns for e in events], dtype=np.float64)
    gaps = starts[1:] - ends[:-1]
    threshold = gap_factor * float(np.median(gaps))
    spans = []
    begin = 0
    for i, gap in enumerate(gaps):
        if gap > threshold:
            spans.append((begin, i + 1))
            begin = i + 1
    spans.append((begin, len(events)))
    return spans


#: Shortest equal-size run collapsed into one repeated boundary. Recurrent
#: boundaries fire once per sequence step (tens of repeats); distinct layers
#: that happen to emit equal sizes (a size-preserving conv after a pool)
#: produce runs of 2-3 and must stay separate boundaries.
MIN_REPEAT_RUN = 4


def canonical_boundaries(events: list[TransferEvent],
                         spans: list[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    """Collapse each span to (bytes, repeats) runs and return the modal span.

    Only runs of MIN_REPEAT_RUN or more equal-size transfers collapse into a
    repeated boundary (an LSTM boundary fires once per sequence step). The
    most common pattern across iterations is the canonical one, which shrugs
    off a truncated first or last span.
    """
    if not spans:
        raise ValidationError("no iteration spans")
    patterns = []
    for lo, hi in spans:
        runs = []
        for ev in events[lo:hi]:
            if runs and runs[-1][0] == ev.payload_bytes:
                runs[-1][1] += 1
            else:
                runs.append([ev.payload_bytes, 1])
        flat = []
        for size, reps in runs:
            if reps >= MIN_REPEAT_RUN:
                flat.append((size, reps))
            else:
                flat.extend((size, 1) for _ in range(reps))
        patterns.append(tuple(flat))
    counts = collections.Counter(patterns)
    best = max(counts.items(), key=lambda kv: (kv[1], -patterns.index(kv[0])))
    return best[0]


def _span_runs(events: list[TransferEvent], lo: int, hi: int) -> list[list]:
    """[size, repeats, first-event-index] runs for one span, collapsed like
    canonical_boundaries."""
    runs = []
    for j in range(lo, hi):
        size = events[j].payload_bytes
        if runs and runs[-1][0] == size:
            runs[-1][1] += 1
        else:
            runs.append([size, 1, j])
    flat = []
    for size, reps, first in runs:
        if reps >= MIN_REPEAT_RUN:
            flat.append([size, reps, first])
        else:
            flat.extend([size, 1, first + r] for r in range(reps))
    return flat


def observed_gaps(events: list[TransferEvent], spans: list[tuple[int, int]],
                  pattern) -> np.ndarray:
    """Median idle gap preceding each boundary's first transfer (0 for the
    first boundary), over the spans matching the canonical pattern."""
    per_span = []
    for lo, hi in spans:
        runs = _span_runs(events, lo, hi)
        if tuple((s, r) for s, r, _ in runs) != tuple(pattern):
            continue
        gaps = [0.0]
        for _, _, first in runs[1:]:
            gaps.append(events[first].start_ns - events[first - 1].end_ns)
        per_span.append(gaps)
    if not per_span:
        raise AnalysisError("no span matches the canonical boundary pattern")
    return np.median(np.array(per_span, dtype=np.float64), axis=0)


# -- per-type size inference --------------------------------------------------------


def conv_output_width(w_prev: int, f: int, s: int, p: int) -> int:
    """Evaluate W_out = (W_prev - F + 2P)/S + 1, exact division required."""
    if min(w_prev, f, s) < 1 or p < 0:
        raise ValidationError("conv geometry values must be positive (P >= 0)")
    num = w_prev - f + 2 * p
    if num < 0 or num % s:
        raise ValidationError(
            f"conv geometry (W={w_prev}, F={f}, S={s}, P={p}) "
            "produces a non-integer width")
    return num // s + 1


def pool_output_width(w_prev: int, f: int, s: int) -> int:
    """Evaluate W_out = (W_prev - F)/S + 1, exact division required."""
    if min(w_prev, f, s) < 1:
        raise ValidationError("pool geometry values must be positive")
    num = w_prev - f
    if num < 0 or num % s:
        raise ValidationError(
            f"pool geometry (W={w_prev}, F={f}, S={s}) "
            "produces a non-integer width")
    return num // s + 1


def infer_fc(obs: LayerObservation) -> int:
    """Units of an FC boundary: N = elements / batch."""
    n, rem = divmod(obs.elements, obs.batch)
    if rem:
        raise AnalysisError(
            f"boundary {obs.boundary_index}: {obs.elements} elements not "
            f"divisible by batch {obs.batch} (batch misestimated?)")
    return n


def _per_sample(obs: LayerObservation) -> int:
    per, rem = divmod(obs.elements, obs.batch)
    if rem:
        raise AnalysisError(
            f"boundary {obs.boundary_index}: {obs.elements} elements not "
            f"divisible by batch {obs.batch} (batch misestimated?)")
    return per


def infer_conv_candidates(w_prev: int, c_prev: int, obs: LayerObservation, *,
                          channel_convention: str = "map") -> list[tuple]:
    """All (W_out, C, F, S, P) consistent with a conv reading of ``obs``.

    Enumerates every factorization W_out^2 x C of the per-sample element
    count, then every (F, S, P) with S <= F <= floor(w_prev/2), P <= F and
    the output-width formula exact.
    """
    _check_spatial_args(w_prev, c_prev, channel_convention)
    per = _per_sample(obs)
    out = []
    w = 1
    while w * w <= per:
        if per % (w * w) == 0:
            c = per // (w * w)
            if channel_convention == "input" and c != c_prev:
                w += 1
                continue
            for f in range(1, w_prev // 2 + 1):
                for s in range(1, f + 1):
                    num = s * (w - 1) - w_prev + f
                    if num >= 0 and num % 2 == 0 and num // 2 <= f:
                        out.append((w, c, f, s, num // 2))
        w += 1
    return sorted(out)


def infer_pool_candidates(w_prev: int, c_prev: int, obs: LayerObservation, *,
                          channel_convention: str = "map") -> list[tuple]:
    """All (W_out, C, F, S) consistent with a pool reading of ``obs``."""
    _check_spatial_args(w_prev, c_prev, channel_convention)
    per = _per_sample(obs)
    out = []
    w = 1
    while w * w <= per:
        if per % (w * w) == 0:
            c = per // (w * w)
            if channel_convention == "input" and c != c_prev:
                w += 1
                continue
            for f in range(1, w_prev // 2 + 1):
                for s in range(1, f + 1):
                    num = w_prev - f
                    if num % s == 0 and num // s + 1 == w:
                        out.append((w, c, f, s))
        w += 1
    return sorted(out)


def _check_spatial_args(w_prev: int, c_prev: int, convention: str) -> None:
    if w_prev < 2:
        raise ValidationError("w_prev must be >= 2")
    if c_prev < 1:
        raise ValidationError("c_prev must be >= 1")
    if convention not in CHANNEL_CONVENTIONS:
        raise ValidationError(
            f"channel_convention must be one of {CHANNEL_CONVENTIONS}")


# -- layer-type classification ------------------------------------------------------


@dataclasses.dataclass
class LayerTypeModel:
    """KNN layer-type classifier over per-boundary features."""

    knn: object
    mu: np.ndarray
    sigma: np.ndarray
    k: int


def boundary_features(boundaries, batch: int,
                      element_bytes: int = ELEMENT_BYTES,
                      gap_ns=None) -> np.ndarray:
    """Features for each (bytes, repeats) boundary of one iteration.

    Columns: log10 per-sample elements, log10 size ratio to the previous
    boundary, log10 ratio to the next, fractional position, log10 repeat
    count, has-previous / has-next indicators (so a missing neighbor is not
    mistaken for a ratio of exactly 1), and two work-per-element features
    from the compute gap preceding the transfer. Work per output element --
    (gap - launch overhead) / (elements x MAC cost) -- is exactly 1 for a
    pool, exactly the previous boundary's per-sample size for FC (N x N_prev
    multiply-accumulates), and F^2 x filters for conv, so its log and its log
    ratio to the previous size pin the type. The first boundary gets zeros
    (its preceding gap is the iteration gap and says nothing).
    """
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    sizes = np.array([b for b, _ in boundaries], dtype=np.float64)
    reps = np.array([r for _, r in boundaries], dtype=np.float64)
    if sizes.size == 0:
        raise ValidationError("no boundaries to featurize")
    per = sizes / (element_bytes * batch)
    feats = np.zeros((sizes.size, 9))
    feats[:, 0] = np.log10(per)
    feats[1:, 1] = np.log10(per[1:] / per[:-1])
    feats[:-1, 2] = np.log10(per[:-1] / per[1:])
    if sizes.size > 1:
        feats[:, 3] = np.arange(sizes.size) / (sizes.size - 1)
    feats[:, 4] = np.log10(reps)
    feats[1:, 5] = 1.0
    feats[:-1, 6] = 1.0
    if gap_ns is not None:
        gaps = np.asarray(gap_ns, dtype=np.float64)
        if gaps.shape != (sizes.size,):
            raise ValidationError("gap_ns must have one entry per boundary")
        compute = np.maximum(gaps[1:] - workloads.LAYER_GAP_NS, 0.0)
        wpe = np.maximum(
            compute / (per[1:] * batch * workloads.MAC_COST_NS), 1e-2)
        feats[1:, 7] = np.log10(wpe)
        feats[1:, 8] = np.log10(wpe / per[:-1])
    return feats


def _random_recipe(rng) -> tuple[list[dict], dict]:
    """One random valid model (layers, input_spec) for classifier training."""
    kind = rng.integers(0, 10)
    if kind < 6:  # conv/pool stack + FC head
        width0 = int(rng.choice((16, 20, 24, 28, 32, 40, 48, 56, 64)))
        channels0 = int(rng.choice((1, 3)))
        width = width0
        layers = []
        for _ in range(int(rng.integers(1, 4))):
            if width < 4:
                break
            for _ in range(32):  # rejection-sample an exact geometry
                if rng.random() < 0.5 and width >= 6:
                    # size-preserving conv, the common production shape
                    f = int(rng.choice((3, 5)))
                    s, p = 1, (f - 1) // 2
                else:
                    f = int(rng.integers(1, min(7, width // 2) + 1))
                    s = int(rng.integers(1, min(f, 3) + 1))
                    p = int(rng.integers(0, f + 1))
                num = width - f + 2 * p
                if num >= 0 and num % s == 0 and num // s + 1 <= width:
                    filters = int(rng.choice((8, 16, 24, 32, 64, 128)))
                    layers.append({"type": "conv", "filter": f, "filters": filters,
                                   "stride": s, "pad": p})
                    width = num // s + 1
                    break
            if width >= 4 and rng.random() < 0.8:
                for _ in range(32):
                    f = int(rng.choice((2, 2, 2, 3)))
                    s = f
                    if (width - f) % s == 0 and (width - f) // s + 1 >= 1:
                        layers.append({"type": "pool", "filter": f, "stride": s})
                        width = (width - f) // s + 1
                        break
        for units in _random_fc_head(rng, 0, 3):
            layers.append({"type": "fc", "units": units})
        return layers, {"width": width0, "channels": channels0}
    if kind < 9:  # flat MLP
        layers = [{"type": "fc", "units": u} for u in _random_fc_head(rng, 2, 4)]
        return layers, {"features": int(rng.choice((256, 400, 784, 1024)))}
    hidden = int(rng.choice((32, 64, 128, 256)))
    layers = [{"type": "lstm", "hidden": hidden}]
    for units in _random_fc_head(rng):
        layers.append({"type": "fc", "units": units})
    return layers, {"features": int(rng.choice((16, 28, 32, 64))),
                    "steps": int(rng.choice((8, 16, 28, 32)))}


def _random_fc_head(rng, lo: int = 1, hi: int = 3) -> list[int]:
    head = [int(u) for u in rng.choice(
        (1024, 512, 256, 128, 84, 64, 32), size=int(rng.integers(lo, hi)))]
    head.append(int(rng.choice((1, 2, 10, 10, 100))))
    return head


def build_layer_type_model(seed: int = 0, k: int = 3,
                           n_models: int = 300) -> LayerTypeModel:
    """Train the layer-type KNN on randomly generated valid models."""
    rng = substream(seed, 31)
    feats, labels = [], []
    for i in range(n_models):
        layers, input_spec = _random_recipe(rng)
        batch = (16, 32, 64, 128)[i % 4]
        try:
            prof = workloads.layer_boundary_profile(layers, input_spec, batch)
        except ValidationError:
            continue
        bounds = [(e * ELEMENT_BYTES, r) for (e, r, _) in prof]
        gaps = [workloads.LAYER_GAP_NS + m * workloads.MAC_COST_NS
                for (_, _, m) in prof]
        feats.append(boundary_features(bounds, batch, gap_ns=gaps))
        labels.extend("fc" if l["type"] == "lstm" else l["type"] for l in layers)
    x = np.vstack(feats)
    mu, sigma = standardize_fit(x)
    knn = knn_fit(standardize_apply(x, mu, sigma),
                  [LAYER_TYPES.index(l) for l in labels], k=k)
    return LayerTypeModel(knn=knn, mu=mu, sigma=sigma, k=k)


_DEFAULT_MODEL: list = []


def classify_layer_type(model: LayerTypeModel, boundaries, batch: int,
                        element_bytes: int = ELEMENT_BYTES,
                        gap_ns=None) -> list[str]:
    """Predict fc/conv/pool for each (bytes, repeats) boundary."""
    if not isinstance(model, LayerTypeModel):
        raise ValidationError("model must be a trained LayerTypeModel")
    feats = boundary_features(boundaries, batch, element_bytes, gap_ns=gap_ns)
    pred = knn_predict(model.knn, standardize_apply(feats, model.mu, model.sigma))
    return [LAYER_TYPES[int(i)] for i in pred]


# -- end-to-end pipeline ------------------------------------------------------------


def _truth_tuples(layers, input_spec: dict, batch: int) -> list[dict]:
    """Ground-truth per-boundary records matching the candidate encodings."""
    if isinstance(layers, str):
        layers = workloads.parse_layers(layers)
    width = input_spec.get("width")
    channels = input_spec.get("channels")
    out = []
    for layer in layers:
        kind = layer["type"]
        if kind == "fc":
            out.append({"type": "fc", "n": layer["units"]})
            width = channels = None
        elif kind == "lstm":
            out.append({"type": "fc", "n": layer["hidden"]})
        elif kind == "conv":
            w_out = conv_output_width(width, layer["filter"], layer["stride"],
                                      layer["pad"])
            out.append({"type": "conv",
                        "candidate": (w_out, channels, layer["filter"],
                                      layer["stride"], layer["pad"])})
            width, channels = w_out, layer["filters"]
        else:
            w_out = pool_output_width(width, layer["filter"], layer["stride"])
            out.append({"type": "pool",
                        "candidate": (w_out, channels, layer["filter"],
                                      layer["stride"])})
            width = w_out
    return out


def extract_architecture(events: list[TransferEvent], batch: int, *,
                         element_bytes: int = ELEMENT_BYTES,
                         input_spec: dict | None = None,
                         truth=None, classifier: LayerTypeModel | None = None,
                         gap_factor: float = GAP_FACTOR,
                         channel_convention: str = "map") -> dict:
    """Full pipeline: segment, size, classify, and enumerate candidates.

    Chains layer-to-layer geometry through a set of consistent interpretation
    states (spatial width + channels when known, or flat feature count), so
    reported candidate sets always cover every interpretation that survives
    the whole trace. Raises AnalysisError when no interpretation survives.
    """
    if input_spec is None:
        input_spec = {"features": 784}
    spans = segment_iterations(events, gap_factor=gap_factor)
    bounds = canonical_boundaries(events, spans)
    gaps = observed_gaps(events, spans, bounds)
    if classifier is None:
        if not _DEFAULT_MODEL:
            _DEFAULT_MODEL.append(build_layer_type_model())
        classifier = _DEFAULT_MODEL[0]
    types = classify_layer_type(classifier, bounds, batch, element_bytes,
                                gap_ns=gaps)

    # Interpretation states: ("spatial", width, channels-or-None) or
    # ("flat", features). Conv leaves channels pending (the filter count only
    # shows up in the *next* spatial transfer's volume).
    if "width" in input_spec:
        states = {("spatial", input_spec["width"], input_spec.get("channels", 1))}
    else:
        states = {("flat", input_spec.get("features", 0))}

    report_layers = []
    fc_widths = []
    truth_records = (_truth_tuples(truth, input_spec, batch)
                     if truth is not None else None)
    fallback = {"conv": ("conv", "pool", "fc"), "pool": ("pool", "conv", "fc"),
                "fc": ("fc", "conv", "pool")}
    for idx, ((size, reps), predicted) in enumerate(zip(bounds, types)):
        obs = observation(idx, size, batch, element_bytes, reps)
        entry = {"index": idx, "bytes": size, "repeats": reps,
                 "elements": obs.elements, "type": None,
                 "n": None, "candidates": None}
        # The classifier's pick is tried first; a pick with no surviving
        # geometric interpretation falls through to the next type.
        for kind in fallback[predicted]:
            outcome = _apply_type(kind, states, obs, channel_convention)
            if outcome is not None:
                states, cands, n = outcome
                entry["type"] = kind
                entry["candidates"] = cands
                entry["n"] = n
                if n is not None:
                    fc_widths.append(n)
                break
        else:
            raise AnalysisError(
                f"boundary {idx}: no consistent layer interpretation")
        if truth_records is not None:
            entry["truth"] = truth_records[idx] if idx < len(truth_records) else None
            entry["truth_contained"] = _truth_contained(entry)
        report_layers.append(entry)

    report = {"batch": batch, "element_bytes": element_bytes,
              "iterations": len(spans), "n_boundaries": len(bounds),
              "fc_widths": fc_widths, "layers": report_layers}
    if truth_records is not None:
        report["truth_contained_all"] = all(
            l.get("truth_contained") for l in report_layers)
    return report


def _apply_type(kind: str, states: set, obs: LayerObservation,
                convention: str):
    """Read ``obs`` as ``kind`` from every live interpretation state.

    Returns (next_states, sorted candidates or None, fc units or None), or
    None when no state survives that reading.
    """
    if kind == "fc":
        try:
            n = infer_fc(obs)
        except AnalysisError:
            return None
        return {("flat", n)}, None, n
    cands: set = set()
    next_states: set = set()
    for state in states:
        if state[0] != "spatial" or state[1] < 2:
            continue
        _, width, channels = state
        if kind == "conv":
            found = infer_conv_candidates(width, channels or 1, obs,
                                          channel_convention=convention)
        else:
            found = infer_pool_candidates(width, channels or 1, obs,
                                          channel_convention=convention)
        cands.update(found)
        for cand in found:
            if channels is not None and cand[1] != channels:
                continue
            if kind == "conv":
                next_states.add(("spatial", cand[0], None))
            else:
                next_states.add(("spatial", cand[0], cand[1]))
    if not next_states:
        return None
    return next_states, sorted(cands), None


def _truth_contained(entry: dict) -> bool:
    truth = entry.get("truth")
    if truth is None or truth["type"] != entry["type"]:
        return False
    if entry["type"] == "fc":
        return entry["n"] == truth["n"]
    return tuple(truth["candidate"]) in set(entry["candidates"])
