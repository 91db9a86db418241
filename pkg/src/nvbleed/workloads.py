"""Victim workload generators for the fingerprinting and extraction studies.

Every generator returns a :class:`WorkloadSpec`: a fully deterministic
transfer schedule (offsets, sizes, kinds) derived from its seed. Class
identity (which app, which character, which model) is encoded in preset
tables keyed independently of the run seed, so class signatures are stable
across runs while individual traces vary in phase and jitter.

Preset families:

* 8 molecular-dynamics style apps — periodic bursts with distinct period,
  chunk count, chunk sizes, and a sprinkle of sub-256 B chunks that modulate
  the contention multiplier seen by a timing prober.
* 10 data-parallel DNN trainings — one gradient exchange per iteration of
  parameter-count x 4 bytes, split into 4 MiB buckets.
* 50 rendered characters — per-frame bursts over a 10 x 5 lattice of
  (chunks per frame) x (small-chunk fraction), plus per-character byte
  scale and frame period; identical background prologue for all characters.
* model-parallel DNNs — one transfer per layer boundary per iteration, with
  output sizes computed from the printed layer-output equations (conv and
  pool outputs scale with *input* channels, exactly as printed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import ValidationError
from .util import sha256_json, substream

#: Derivation key for preset tables; deliberately independent of run seeds.
FIXED_PRESET_KEY = 0xC0FFEE

ELEMENT_BYTES = 4
GRADIENT_BUCKET_BYTES = 4 * 1024 * 1024

#: Sub-256 B chunk sizes (32 B steps) used for timing texture.
SMALL_SIZES = (32, 64, 96, 128, 160, 192, 224)

# -- molecular-dynamics style presets -----------------------------------------
# period_ns, (large chunk count, large bytes), (small chunk count, small bytes)
OPENMM_PRESETS = {
    "rf":                {"period_ns": 1_800_000, "large": (4, 16384),    "small": (3, 96)},
    "pme":               {"period_ns": 2_200_000, "large": (5, 24576),    "small": (4, 64)},
    "apoa1-rf":          {"period_ns": 2_600_000, "large": (7, 32768),    "small": (4, 160)},
    "apoa1-pme":         {"period_ns": 3_000_000, "large": (8, 49152),    "small": (6, 128)},
    "apoa1-ljpme":       {"period_ns": 3_400_000, "large": (10, 65536),   "small": (8, 192)},
    "amoeba-pme":        {"period_ns": 4_000_000, "large": (13, 98304),   "small": (10, 96)},
    "amber20-dhfr":      {"period_ns": 4_800_000, "large": (16, 147456),  "small": (7, 224)},
    "amber20-cellulose": {"period_ns": 5_800_000, "large": (22, 196608),  "small": (12, 32)},
}

# -- DNN model presets ---------------------------------------------------------
# Simple models carry their printed layer recipe; parameter counts for the
# famous models assume a 10-class final layer (the victims classify digits at
# 224 x 224 input). Data-parallel traffic is parameters x 4 bytes per iteration.
MODEL_PRESETS = {
    "MLP":        {"layers": "F512-F256-F10", "input": {"features": 784},
                   "params": 535_818, "period_ns": 2_600_000},
    "CNN_1":      {"layers": "C5,16,1,2-P2,2-F10", "input": {"width": 28, "channels": 1},
                   "params": 31_786, "period_ns": 1_300_000},
    "CNN_2":      {"layers": "C3,32,1,1-P2,2-C3,64,1,1-P2,2-C3,128,1,1-P2,2-F256-F10",
                   "input": {"width": 32, "channels": 1},
                   "params": 619_786, "period_ns": 2_400_000},
    "Regression": {"layers": "F512-F128-F1", "input": {"features": 784},
                   "params": 467_713, "period_ns": 3_200_000},
    "LSTM":       {"layers": "LSTM128-F10", "input": {"features": 28, "steps": 28},
                   "params": 81_674, "period_ns": 1_900_000},
    "AlexNet":    {"layers": None, "input": {"width": 224, "channels": 3},
                   "params": 57_044_810, "period_ns": 16_000_000},
    "VGG16":      {"layers": None, "input": {"width": 224, "channels": 3},
                   "params": 134_301_514, "period_ns": 30_000_000},
    "GoogLeNet":  {"layers": None, "input": {"width": 224, "channels": 3},
                   "params": 5_610_154, "period_ns": 6_000_000},
    "ResNet-18":  {"layers": None, "input": {"width": 224, "channels": 3},
                   "params": 11_181_642, "period_ns": 8_500_000},
    "ResNet-50":  {"layers": None, "input": {"width": 224, "channels": 3},
                   "params": 23_528_522, "period_ns": 12_000_000},
}

SIMPLE_MODELS = ("MLP", "CNN_1", "CNN_2", "Regression", "LSTM")

#: The 18 fingerprintable applications: 8 HPC benchmarks + 10 DNN trainings.
APP_PRESETS = tuple(OPENMM_PRESETS) + tuple(MODEL_PRESETS)

N_CHARACTERS = 50

#: chunks-per-frame ladder indexed by character // 5 (geometric so neighboring
#: classes differ by a constant factor in link-busy fraction).
CHARACTER_CHUNK_LADDER = (6, 9, 13, 19, 28, 41, 60, 88, 128, 188)

#: Background-scene prologue rendered identically before every character.
CHARACTER_PROLOGUE = (262144, 524288, 262144)

CHARACTER_CONTENT_JITTER = 0.06
# Effective tile-render throughput: each uploaded chunk is followed by the
# compute time that produced it, spreading a frame's uploads across the
# frame period instead of emitting one solid burst.
CHARACTER_RENDER_BPS = 8.0e9
CHARACTER_BASE_PERIOD_NS = 16_000_000
CHARACTER_PERIOD_SPAN_NS = 20_000_000

# model-parallel pacing
LAYER_GAP_NS = 5_000
ITERATION_GAP_NS = 400_000
#: Effective cost of one multiply-accumulate on the victim GPU (~50 TFLOP/s).
#: Layer compute time (MACs x this) separates the transfers of one iteration,
#: so heavy layers announce themselves through the gap before their output
#: ships, while even the busiest layer stays well under the iteration gap.
MAC_COST_NS = 0.00002


@dataclass(frozen=True)
class WorkloadSpec:
    """A deterministic transfer schedule for one victim process.

    ``iter_schedule`` yields scheduling items: ``("until", t_ns)`` — wait for
    an absolute time; ``("sleep", d_ns)`` — wait relative to the previous
    transfer's completion; ``("xfer", payload_bytes)`` — issue one push
    transfer. Identical (kind, name, params, seed) replay identically.
    """

    kind: str
    name: str
    seed: int
    params: dict

    def iter_schedule(self, horizon_ns: int | None = None):
        gen = _SCHEDULERS[self.kind]
        rng = substream(self.seed, 5, 0)
        yield from gen(self.params, rng, horizon_ns)

    def materialize(self, horizon_ns: int) -> list:
        return [list(item) for item in self.iter_schedule(horizon_ns)]

    def schedule_checksum(self, horizon_ns: int = 300_000_000) -> str:
        return sha256_json(self.materialize(horizon_ns))

    def total_bytes(self, horizon_ns: int) -> int:
        return sum(item[1] for item in self.iter_schedule(horizon_ns)
                   if item[0] == "xfer")


# -- schedule generators ---------------------------------------------------------

def _burst_schedule(params, rng, horizon_ns):
    """Periodic bursts of back-to-back chunks with start jitter."""
    period = params["period_ns"]
    jitter = params.get("jitter_frac", 0.02) * period
    chunks = params["chunk_bytes"]
    phase = params.get("phase_frac", 0.0) * period
    k = 0
    while True:
        start = round(phase + k * period + jitter * rng.standard_normal())
        start = max(0, start)
        if horizon_ns is not None and start > horizon_ns:
            return
        yield ("until", start)
        for size in chunks:
            yield ("xfer", size)
        k += 1


def _character_schedule(params, rng, horizon_ns):
    # Frame content varies render to render: per-frame multiplicative jitter
    # on each character chunk. The background prologue is rendered identically
    # every frame and stays byte-exact. Chunks are produced as tiles finish
    # rendering, so each chunk is followed by a compute gap proportional to
    # its size rather than being blasted back to back.
    period = params["period_ns"]
    frames = params["frames"]
    chunks = params["chunk_bytes"]
    jitter = params.get("content_jitter", CHARACTER_CONTENT_JITTER)
    render_bps = params.get("render_bps", CHARACTER_RENDER_BPS)
    phase = rng.uniform(0.0, period)
    t = phase
    for _ in range(frames):
        start = max(0, round(t))
        if horizon_ns is not None and start > horizon_ns:
            return
        yield ("until", start)
        for size in CHARACTER_PROLOGUE:
            yield ("xfer", size)
        for size in chunks:
            factor = max(0.7, 1.0 + jitter * rng.standard_normal())
            scaled = _round32(size * factor)
            yield ("xfer", scaled)
            gap = scaled * 1e9 / render_bps
            yield ("sleep", max(0, round(gap * (1.0 + 0.1 * rng.standard_normal()))))
        t += period * (1.0 + 0.015 * rng.standard_normal())


def _model_parallel_schedule(params, rng, horizon_ns):
    # Purely relative pacing: gaps are measured from the previous transfer's
    # completion, so iteration structure survives contention-dependent
    # transfer durations. Each boundary's output ships after the layer
    # computes, so the gap before a transfer carries the layer's cost.
    boundaries = params["boundaries"]  # ((bytes, repeats, compute_ns), ...)
    for _ in range(params["iterations"]):
        for size, repeats, compute_ns in boundaries:
            for _ in range(repeats):
                yield ("sleep", LAYER_GAP_NS + compute_ns)
                yield ("xfer", size)
        yield ("sleep", round(ITERATION_GAP_NS * (1.0 + 0.03 * rng.standard_normal())))


_SCHEDULERS = {
    "app_signature": _burst_schedule,
    "data_parallel_dnn": _burst_schedule,
    "blender_character": _character_schedule,
    "model_parallel_dnn": _model_parallel_schedule,
}


# -- generators ------------------------------------------------------------------

def _round32(x: float) -> int:
    return 32 * max(1, round(x / 32))


def gen_app_signature(preset: str, seed: int) -> WorkloadSpec:
    """Workload for one of the 18 named applications."""
    if preset in OPENMM_PRESETS:
        cfg = OPENMM_PRESETS[preset]
        n_large, large = cfg["large"]
        n_small, small = cfg["small"]
        chunks = tuple([large] * n_large + [small] * n_small)
        return WorkloadSpec(
            kind="app_signature", name=preset, seed=seed,
            params={"period_ns": cfg["period_ns"], "chunk_bytes": chunks,
                    "jitter_frac": 0.02})
    if preset in MODEL_PRESETS:
        cfg = MODEL_PRESETS[preset]
        grad_bytes = cfg["params"] * ELEMENT_BYTES
        chunks = gradient_buckets(grad_bytes)
        return WorkloadSpec(
            kind="data_parallel_dnn", name=preset, seed=seed,
            params={"period_ns": cfg["period_ns"], "chunk_bytes": chunks,
                    "jitter_frac": 0.02})
    raise ValidationError(
        f"unknown app preset {preset!r}; choose from {APP_PRESETS}")


def gradient_buckets(grad_bytes: int) -> tuple[int, ...]:
    """Split one gradient exchange into full 4 MiB buckets plus a remainder."""
    full, rem = divmod(grad_bytes, GRADIENT_BUCKET_BYTES)
    chunks = [GRADIENT_BUCKET_BYTES] * full
    if rem:
        chunks.append(rem)
    return tuple(chunks)


def character_profile(character_index: int) -> dict:
    """Stable per-character constants (independent of any run seed)."""
    if not 0 <= character_index < N_CHARACTERS:
        raise ValidationError(
            f"character_index must be in 0..{N_CHARACTERS - 1}")
    rng = substream(FIXED_PRESET_KEY, 7, character_index)
    n_chunks = CHARACTER_CHUNK_LADDER[character_index // 5]
    # Asset mixes run from all-large to mostly-small.  Even the lightest
    # characters keep a few substantial assets (base mesh, body texture), so
    # the small fraction tops out below 1.
    small_frac = (character_index % 5) / 5.0
    perm = (17 * character_index + 3) % N_CHARACTERS
    period_ns = CHARACTER_BASE_PERIOD_NS + round(
        CHARACTER_PERIOD_SPAN_NS * perm / (N_CHARACTERS - 1))
    large_bytes = _round32(786432.0 + rng.uniform(0.0, 524288.0))
    n_small = round(n_chunks * small_frac)
    smalls = [SMALL_SIZES[i] for i in rng.integers(0, len(SMALL_SIZES), n_small)]
    larges = [large_bytes] * (n_chunks - n_small)
    chunks = larges + smalls
    order = rng.permutation(len(chunks))
    chunks = tuple(chunks[i] for i in order)
    # Shader/scene complexity per byte is a character trait: it sets how fast
    # tiles are produced, i.e. the upload rate during a frame. Heavy-asset
    # characters are budget-constrained to render fast enough that the frame
    # still fits its period.
    total = sum(chunks) + sum(CHARACTER_PROLOGUE)
    cost_cap = 0.75 * period_ns / total  # ns per byte
    cost_hi = min(0.21, cost_cap)
    cost_lo = min(0.055, 0.7 * cost_hi)
    cost = rng.uniform(cost_lo, cost_hi)
    render_bps = 1e9 / cost
    return {"period_ns": period_ns, "chunk_bytes": chunks,
            "n_chunks": n_chunks, "small_frac": small_frac,
            "render_bps": render_bps}


def gen_blender_character(character_index: int, frames: int, seed: int) -> WorkloadSpec:
    """Rendering workload for one of the 50 characters."""
    prof = character_profile(character_index)
    if frames < 1:
        raise ValidationError("frames must be >= 1")
    return WorkloadSpec(
        kind="blender_character", name=f"char{character_index:02d}", seed=seed,
        params={"period_ns": prof["period_ns"], "chunk_bytes": prof["chunk_bytes"],
                "frames": frames, "character_index": character_index,
                "render_bps": prof["render_bps"]})


# -- model-parallel layer math -----------------------------------------------------

def parse_layers(text: str) -> list[dict]:
    """Parse a compact layer recipe like ``C5,16,1,2-P2,2-F256-F10``."""
    layers = []
    for tok in text.split("-"):
        tok = tok.strip()
        if tok.startswith("LSTM"):
            layers.append({"type": "lstm", "hidden": int(tok[4:])})
        elif tok.startswith("C"):
            f, c, s, p = (int(x) for x in tok[1:].split(","))
            layers.append({"type": "conv", "filter": f, "filters": c,
                           "stride": s, "pad": p})
        elif tok.startswith("P"):
            f, s = (int(x) for x in tok[1:].split(","))
            layers.append({"type": "pool", "filter": f, "stride": s})
        elif tok.startswith("F"):
            layers.append({"type": "fc", "units": int(tok[1:])})
        else:
            raise ValidationError(f"cannot parse layer token {tok!r}")
    return layers


def _exact_div(num: int, den: int, what: str) -> int:
    if den <= 0:
        raise ValidationError(f"{what}: non-positive stride")
    q, r = divmod(num, den)
    if r != 0:
        raise ValidationError(f"{what}: produces a non-integer width")
    return q


def layer_boundary_profile(layers: list[dict], input_spec: dict,
                           batch: int) -> list[tuple[int, int, int]]:
    """Per-layer (output elements, repeats, MACs per repeat).

    Conv and pool outputs use *input* channels (width squared x C_in x batch);
    widths evolve as W = (W - F + 2P)/S + 1 for conv and (W - F)/S + 1 for
    pool, and must stay positive integers. MACs estimate the layer's forward
    compute: conv W_out^2*C_out*F^2*C_in, pool one op per output element,
    fc N*N_in, lstm 4*H*(H+N_in) per sequence step (all x batch).
    """
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    width = input_spec.get("width")
    channels = input_spec.get("channels")
    features = input_spec.get("features")
    steps = input_spec.get("steps", 1)
    out: list[tuple[int, int, int]] = []
    for i, layer in enumerate(layers):
        kind = layer["type"]
        what = f"layer {i} ({kind})"
        if kind == "fc":
            in_f = features if features is not None else width * width * channels
            out.append((layer["units"] * batch, 1,
                        layer["units"] * in_f * batch))
            features, width, channels = layer["units"], None, None
        elif kind == "lstm":
            if features is None:
                raise ValidationError(f"{what}: needs a flat input")
            hidden = layer["hidden"]
            out.append((hidden * batch, steps,
                        4 * hidden * (hidden + features) * batch))
            features, steps = hidden, 1
        elif kind in ("conv", "pool"):
            if width is None or channels is None:
                raise ValidationError(f"{what}: needs a spatial input")
            f = layer["filter"]
            if kind == "conv":
                w_out = _exact_div(width - f + 2 * layer["pad"], layer["stride"], what) + 1
            else:
                w_out = _exact_div(width - f, layer["stride"], what) + 1
            if w_out <= 0:
                raise ValidationError(f"{what}: produces a non-positive width")
            area = w_out * w_out
            if kind == "conv":
                macs = area * layer["filters"] * f * f * channels * batch
            else:
                macs = area * channels * batch
            out.append((area * channels * batch, 1, macs))
            width = w_out
            if kind == "conv":
                channels = layer["filters"]
            features = width * width * channels
        else:
            raise ValidationError(f"unknown layer type {kind!r}")
    return out


def layer_boundary_elements(layers: list[dict], input_spec: dict,
                            batch: int) -> list[tuple[int, int]]:
    """Per-layer (output elements, repeats); see layer_boundary_profile."""
    return [(elems, reps) for elems, reps, _ in
            layer_boundary_profile(layers, input_spec, batch)]


def gen_model_parallel_dnn(layers, batch: int, iterations: int,
                           element_bytes: int = ELEMENT_BYTES,
                           input_spec: dict | None = None,
                           seed: int = 0,
                           name: str = "model") -> WorkloadSpec:
    """Model-parallel training traffic: one transfer per layer boundary.

    ``layers`` is a list of layer dicts or a compact recipe string. Each
    iteration emits every boundary's output (elements x element_bytes), with
    an LSTM boundary repeated once per sequence step, then an iteration gap.
    """
    if isinstance(layers, str):
        layers = parse_layers(layers)
    if input_spec is None:
        input_spec = {"features": 784}
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    boundaries = tuple(
        (elems * element_bytes, repeats, round(macs * MAC_COST_NS))
        for elems, repeats, macs in layer_boundary_profile(layers, input_spec, batch))
    return WorkloadSpec(
        kind="model_parallel_dnn", name=name, seed=seed,
        params={"boundaries": boundaries, "iterations": iterations,
                "batch": batch, "element_bytes": element_bytes,
                "layers": tuple(tuple(sorted(l.items())) for l in layers)})


def gen_model_preset(preset: str, batch: int, iterations: int,
                     seed: int = 0) -> WorkloadSpec:
    """Model-parallel workload for one of the simple model presets."""
    if preset not in MODEL_PRESETS or MODEL_PRESETS[preset]["layers"] is None:
        raise ValidationError(
            f"model-parallel traces need a layer recipe; choose from {SIMPLE_MODELS}")
    cfg = MODEL_PRESETS[preset]
    return gen_model_parallel_dnn(cfg["layers"], batch, iterations,
                                  input_spec=cfg["input"], seed=seed, name=preset)


def workload_process(spec: WorkloadSpec, src: int, dst: int, name: str | None = None):
    """Wrap a WorkloadSpec as a SimProcess pushing src -> dst."""
    from .engine import SimProcess, Sleep, SleepUntil, Transfer

    def program(ctx):
        for item in spec.iter_schedule():
            op = item[0]
            if op == "until":
                yield SleepUntil(item[1])
            elif op == "sleep":
                yield Sleep(item[1])
            else:
                yield Transfer(src, dst, item[1], kind="uvm_access")

    return SimProcess(gpu=src, program=program, name=name or spec.name)
