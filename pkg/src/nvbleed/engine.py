"""Deterministic discrete-event core with generator-based processes.

Processes are Python generators yielding action objects (:class:`Transfer`,
:class:`Sleep`, :class:`ReadCounters`, ...); the engine resumes each with the
action's result. The virtual clock is an integer nanosecond counter — the
simulated analog of a high-resolution timestamp register — and the run queue
is ordered by (time, process id, sequence number), so identical inputs and
seed replay to byte-identical event logs and counter state.

Measurement noise (transfer-timing jitter, counter-read noise, cross-VM
residue jitter) comes from named substreams of the run seed and perturbs only
observed values; schedules and counter ground truth are noise-free, so a run
with ``measurement_noise=False`` keeps the same event order and true state.

Contention is tracked per link: a transfer starting while other processes'
wire bytes are in flight on the same GPU pair is slowed by the profile's
contention curve (the multiplier is fixed at start). Transfers that touch a
GPU whose profiler capture is active run ``profiler_dilation`` times slower.
Workload generators for the fingerprinting scenarios live in
:mod:`nvbleed.workloads` and are re-exported here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from heapq import heappush, heappop
from typing import Callable, Generator, Optional

from . import counters as counters_mod
from . import link as link_mod
from .counters import CounterState, CounterSnapshot
from .exceptions import SimulationError, ValidationError
from .topo import Topology
from .util import GaussBuffer, substream

# Substream ids under the run seed.
STREAM_TIMING = 1
STREAM_COUNTERS = 2
STREAM_LEAK = 3
STREAM_PROC = 4
STREAM_WORKLOAD = 5

DEFAULT_CROSS_VM_ALPHA = 0.05
DEFAULT_CROSS_VM_REL_SIGMA = 0.5


# -- actions -------------------------------------------------------------------

@dataclass(frozen=True)
class Transfer:
    """Move ``payload_bytes`` src -> dst over their direct link.

    ``kind`` selects the counter semantics: ``explicit_copy`` and ``probe``
    are pull-style (read request + response), ``uvm_access`` is push-style
    (posted remote write).
    """

    src: int
    dst: int
    payload_bytes: int
    kind: str = "explicit_copy"


@dataclass(frozen=True)
class Sleep:
    duration_ns: int


@dataclass(frozen=True)
class SleepUntil:
    time_ns: int


@dataclass(frozen=True)
class NopLoop:
    """Busy-wait for ``count`` no-op iterations of ``nop_cost_ns`` each."""

    count: int


@dataclass(frozen=True)
class RegisterProfiler:
    gpu: int


@dataclass(frozen=True)
class ProfilerStart:
    gpu: int


@dataclass(frozen=True)
class ProfilerStop:
    gpu: int


@dataclass(frozen=True)
class ReadCounters:
    gpu: int
    aggregation: bool = False
    names: Optional[tuple] = None


@dataclass(frozen=True)
class TransferResult:
    """What the issuing process observes about its own transfer."""

    start_ns: int
    end_ns: int
    duration_ns: int
    measured_ns: float          # duration as measured by a noisy clock
    payload_bytes: int
    wire_bytes: int
    contending_bytes: int
    dilated: bool


@dataclass(frozen=True)
class SimProcess:
    """A single-GPU program: ``program(ctx)`` must return a generator."""

    gpu: int
    program: Callable[["ProcContext"], Generator]
    name: str = "proc"


class ProcContext:
    """Per-process view handed to program generators."""

    def __init__(self, engine: "Engine", pid: int, proc: SimProcess):
        self.engine = engine
        self.pid = pid
        self.gpu = proc.gpu
        self.vm = engine.topology.vm_assignment[proc.gpu]
        self.name = proc.name
        self._rng = None

    @property
    def now_ns(self) -> int:
        return self.engine.now_ns

    @property
    def profile(self):
        return self.engine.topology.profile

    @property
    def rng(self):
        if self._rng is None:
            self._rng = substream(self.engine.seed, STREAM_PROC, self.pid)
        return self._rng


def cross_vm_observe(topology: Topology, observer_gpu: int,
                     victim_link: tuple[int, int], per_slot_wire_bytes,
                     alpha: float = DEFAULT_CROSS_VM_ALPHA,
                     rel_sigma: float = DEFAULT_CROSS_VM_REL_SIGMA,
                     gauss: GaussBuffer | None = None) -> dict[int, int]:
    """Stray receive bytes an observer GPU accrues from a victim transfer.

    Every physical link the observer shares with a victim endpoint carries an
    attenuated copy of the victim's per-slot wire traffic: ``alpha`` times the
    bytes, plus zero-mean gaussian jitter with sigma ``rel_sigma`` times the
    attenuated signal, truncated at zero. Returns {observer local slot: bytes}.
    """
    src, dst = victim_link
    if observer_gpu in (src, dst):
        raise ValidationError("observer GPU is an endpoint of the victim link")
    shared = [e for e in (src, dst) if topology.has_link(observer_gpu, e)]
    if not shared:
        raise ValidationError(
            f"GPU {observer_gpu} shares no physical link with victim link {victim_link}")
    out: dict[int, int] = {}
    if alpha <= 0:
        return out
    for endpoint in shared:
        slots = topology.link_slots(observer_gpu, endpoint)
        for i, wire in enumerate(per_slot_wire_bytes):
            if wire == 0:
                continue
            mean = alpha * wire
            value = mean
            if gauss is not None and rel_sigma > 0:
                value += rel_sigma * mean * gauss.next()
            leaked = max(0, round(value))
            if leaked:
                out[slots[i]] = out.get(slots[i], 0) + leaked
    return out


class Engine:
    """Single-threaded event core over one topology."""

    def __init__(self, topology: Topology, seed: int, *,
                 counters_enabled: bool = True,
                 measurement_noise: bool = True,
                 cross_vm_alpha: float = DEFAULT_CROSS_VM_ALPHA,
                 cross_vm_rel_sigma: float = DEFAULT_CROSS_VM_REL_SIGMA,
                 log_events: bool = True):
        self.topology = topology
        self.profile = topology.profile
        self.seed = seed
        self.now_ns = 0
        self.measurement_noise = measurement_noise
        self.cross_vm_alpha = cross_vm_alpha
        self.cross_vm_rel_sigma = cross_vm_rel_sigma
        self.counters = CounterState(topology, counters_enabled=counters_enabled)
        self.log: list[tuple[int, str, int, str]] = []
        self.log_events = log_events

        self._heap: list = []
        self._seq = 0
        self._procs: list[ProcContext] = []
        self._inflight: dict[tuple[int, int], list] = {}
        self._brackets: dict[int, int] = {}
        self._gauss_timing = GaussBuffer(substream(seed, STREAM_TIMING))
        self._gauss_counters = GaussBuffer(substream(seed, STREAM_COUNTERS))
        self._gauss_leak = GaussBuffer(substream(seed, STREAM_LEAK))
        self._leak_cache: dict[tuple[int, int], tuple] = {}
        self._profiler_version = 0
        self._ran = False

    # -- construction ---------------------------------------------------------

    def add_process(self, proc: SimProcess) -> int:
        if self._ran:
            raise SimulationError("cannot add processes after run()")
        self.topology._check_gpu(proc.gpu)
        pid = len(self._procs)
        self._procs.append(ProcContext(self, pid, proc))
        gen = proc.program(self._procs[pid])
        self._push(0, pid, gen, None)
        return pid

    # -- event loop -------------------------------------------------------------

    def _push(self, time_ns: int, pid: int, gen, payload) -> None:
        heappush(self._heap, (time_ns, pid, self._seq, gen, payload))
        self._seq += 1

    def run(self, duration_s: float) -> None:
        if self._ran:
            raise SimulationError("engine already ran; build a new one")
        self._ran = True
        horizon_ns = round(duration_s * 1e9)
        if horizon_ns < 0:
            raise ValidationError("duration must be non-negative")
        heap = self._heap
        while heap:
            time_ns, pid, _seq, gen, payload = heappop(heap)
            if time_ns > horizon_ns:
                break
            self.now_ns = time_ns
            try:
                action = gen.send(payload)
            except StopIteration:
                self._log("end", pid, "")
                continue
            wake_ns, result = self._dispatch(pid, action)
            self._push(wake_ns, pid, gen, result)

    def _log(self, kind: str, pid: int, payload: str) -> None:
        if self.log_events:
            self.log.append((self.now_ns, kind, pid, payload))

    def log_lines(self):
        """Event log as line-delimited `time_ns event_kind process payload`."""
        for time_ns, kind, pid, payload in self.log:
            yield f"{time_ns} {kind} {pid} {payload}".rstrip()

    # -- action dispatch ----------------------------------------------------------

    def _dispatch(self, pid: int, action):
        now = self.now_ns
        if isinstance(action, Transfer):
            return self._do_transfer(pid, action)
        if isinstance(action, Sleep):
            if action.duration_ns < 0:
                raise ValidationError("negative sleep")
            return now + int(action.duration_ns), None
        if isinstance(action, SleepUntil):
            return max(now, int(action.time_ns)), None
        if isinstance(action, NopLoop):
            if action.count < 0:
                raise ValidationError("negative nop count")
            self._log("nop", pid, f"count={action.count}")
            return now + round(action.count * self.profile.nop_cost_ns), None
        if isinstance(action, RegisterProfiler):
            self.counters.register_profiler(pid, action.gpu)
            self._profiler_version += 1
            self._leak_cache.clear()
            self._log("profiler_register", pid, f"gpu={action.gpu}")
            return now, None
        if isinstance(action, ProfilerStart):
            if not self.counters.is_profiler(pid, action.gpu):
                raise SimulationError(
                    f"process {pid} has no profiler registered on GPU {action.gpu}")
            self._brackets[action.gpu] = self._brackets.get(action.gpu, 0) + 1
            self._log("profiler_start", pid, f"gpu={action.gpu}")
            return now, None
        if isinstance(action, ProfilerStop):
            if self._brackets.get(action.gpu, 0) <= 0:
                raise SimulationError(f"no active profiler capture on GPU {action.gpu}")
            self._brackets[action.gpu] -= 1
            self._log("profiler_stop", pid, f"gpu={action.gpu}")
            return now, None
        if isinstance(action, ReadCounters):
            return self._do_read(pid, action)
        raise ValidationError(f"unknown action {action!r}")

    def _do_transfer(self, pid: int, t: Transfer):
        proc = self._procs[pid]
        if proc.gpu not in (t.src, t.dst):
            raise SimulationError(
                f"process {pid} on GPU {proc.gpu} cannot issue transfer "
                f"{t.src}->{t.dst}: not an endpoint")
        vms = self.topology.vm_assignment
        if not (vms[t.src] == proc.vm == vms[t.dst]):
            raise SimulationError(
                f"VM placement violation: process {pid} (VM {proc.vm}) cannot "
                f"use link {t.src}<->{t.dst} (VMs {vms[t.src]}, {vms[t.dst]})")
        try:
            slots = self.topology._slot_ids[(t.src, t.dst)]
        except KeyError:
            slots = self.topology.link_slots(t.src, t.dst)
        sched = link_mod.schedule_transfer(t.payload_bytes, len(slots))

        now = self.now_ns
        key = (min(t.src, t.dst), max(t.src, t.dst))
        flights = self._inflight.setdefault(key, [])
        if flights:
            flights[:] = [f for f in flights if f[0] > now]
        contending = sum(w for end, p, w in flights if p != pid)

        dilated = bool(self._brackets.get(t.src) or self._brackets.get(t.dst))
        dilation = self.profile.profiler_dilation if dilated else 1.0
        duration_f = link_mod.transfer_time_ns(self.profile, sched, contending, dilation)
        duration = round(duration_f)
        end = now + duration
        if sched.wire_bytes:
            flights.append((end, pid, sched.wire_bytes))

        self.counters.account_transfer(t.src, t.dst, pid, t.kind, sched)
        self._leak(t.src, t.dst, sched)

        measured = duration_f
        if self.measurement_noise and self.profile.timing_noise_ns > 0:
            measured = max(0.0, duration_f +
                           self.profile.timing_noise_ns * self._gauss_timing.next())
        if self.log_events:
            self.log.append((
                now, "transfer", pid,
                f"src={t.src} dst={t.dst} bytes={t.payload_bytes} kind={t.kind} "
                f"wire={sched.wire_bytes} contending={contending} "
                f"dilated={int(dilated)} duration_ns={duration}"))
        return end, TransferResult(
            start_ns=now, end_ns=end, duration_ns=duration, measured_ns=measured,
            payload_bytes=t.payload_bytes, wire_bytes=sched.wire_bytes,
            contending_bytes=contending, dilated=dilated)

    def _leak_targets(self, src: int, dst: int) -> tuple:
        key = (src, dst, self._profiler_version)
        hit = self._leak_cache.get(key)
        if hit is None:
            observers = []
            for gpu in sorted(self.counters.profiler_gpus()):
                if gpu in (src, dst):
                    continue
                if self.topology.has_link(gpu, src) or self.topology.has_link(gpu, dst):
                    observers.append(gpu)
            hit = tuple(observers)
            self._leak_cache[key] = hit
        return hit

    def _leak(self, src: int, dst: int, sched) -> None:
        if self.cross_vm_alpha <= 0 or sched.wire_bytes == 0:
            return
        observers = self._leak_targets(src, dst)
        if not observers:
            return
        gauss = self._gauss_leak if self.measurement_noise else None
        for gpu in observers:
            leaked = cross_vm_observe(
                self.topology, gpu, (src, dst), sched.per_slot_wire_bytes,
                self.cross_vm_alpha, self.cross_vm_rel_sigma, gauss)
            if leaked:
                self.counters.accrue_external_rx(gpu, leaked)

    def _do_read(self, pid: int, action: ReadCounters):
        now = self.now_ns
        names = tuple(action.names) if action.names is not None else None
        sigma = self.profile.counter_noise_bytes if self.measurement_noise else 0.0
        snap = self.counters.snapshot(
            action.gpu, pid, now, aggregation=action.aggregation, names=names,
            gauss=self._gauss_counters if sigma > 0 else None, noise_sigma=sigma)
        cost = round(counters_mod.read_cost_ns(self.profile, names))
        if self.log_events:
            self.log.append((
                now, "counter_read", pid,
                f"gpu={action.gpu} agg={int(action.aggregation)} "
                f"names={len(names) if names is not None else len(counters_mod.COUNTER_NAMES)}"))
        return now + cost, snap


@dataclass
class RunResult:
    """Event log plus final counter state for one completed run."""

    engine: Engine

    @property
    def log(self):
        return self.engine.log

    @property
    def counters(self) -> CounterState:
        return self.engine.counters

    def log_lines(self):
        return self.engine.log_lines()


def run(topology: Topology, processes, duration_s: float, seed: int,
        **engine_kwargs) -> RunResult:
    """Build an engine, add ``processes`` (list of SimProcess), run, return result."""
    eng = Engine(topology, seed, **engine_kwargs)
    for proc in processes:
        eng.add_process(proc)
    eng.run(duration_s)
    return RunResult(engine=eng)


# Workload generators are part of the engine's public surface.
from .workloads import (  # noqa: E402  (re-export)
    APP_PRESETS,
    MODEL_PRESETS,
    WorkloadSpec,
    gen_app_signature,
    gen_blender_character,
    gen_model_parallel_dnn,
    workload_process,
)

__all__ = [
    "Engine", "RunResult", "run", "cross_vm_observe",
    "Transfer", "Sleep", "SleepUntil", "NopLoop",
    "RegisterProfiler", "ProfilerStart", "ProfilerStop", "ReadCounters",
    "TransferResult", "SimProcess", "ProcContext",
    "WorkloadSpec", "APP_PRESETS", "MODEL_PRESETS",
    "gen_app_signature", "gen_blender_character", "gen_model_parallel_dnn",
    "workload_process",
]
