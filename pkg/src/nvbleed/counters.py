"""Per-GPU, per-slot link performance counters.

Fourteen counters per GPU, each kept per slot. ``total_*`` counters are
device-wide: they accumulate wire bytes (payload plus packet overhead) from
every process touching the GPU's links. ``user_*`` counters are scoped to a
(process, GPU) pair and count only that process's own payload bytes, headers
excluded. Throughput counters are not stored; they are derived at read time
as bytes-since-last-read over elapsed time. Atomic-traffic counters exist in
the taxonomy but no workload here issues remote atomics, so they stay zero.

Pull-style transfers (explicit copies and probes) move data src->dst as
read replies: the destination's receive and response counters grow, and a
single 2-flit request packet is charged in the reverse direction. Push-style
transfers (remote writes through mapped memory) charge write counters on the
source and plain receive counters on the destination, with no request packet.

Reading counters requires the reader to be registered as a profiler on the
GPU and costs simulated time (double when throughput counters are included).
A global ``counters_enabled`` switch models a driver that blocks user-mode
profiling: when off, registration and reads fail and attacks must fall back
to :func:`estimate_throughput`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import CountersDisabledError, SimulationError, ValidationError
from .link import REQUEST_PACKET_BYTES, PacketSchedule
from .topo import Topology

RECEIVE_THROUGHPUT = "nvlink_receive_throughput"
TRANSMIT_THROUGHPUT = "nvlink_transmit_throughput"

THROUGHPUT_COUNTERS = (RECEIVE_THROUGHPUT, TRANSMIT_THROUGHPUT)

USER_COUNTERS = (
    "nvlink_user_data_received",
    "nvlink_user_data_transmitted",
    "nvlink_user_write_data_transmitted",
    "nvlink_user_response_data_received",
    "nvlink_user_nratom_data_transmitted",
    "nvlink_user_ratom_data_transmitted",
)

TOTAL_COUNTERS = (
    "nvlink_total_data_received",
    "nvlink_total_data_transmitted",
    "nvlink_total_write_data_transmitted",
    "nvlink_total_response_data_received",
    "nvlink_total_nratom_data_transmitted",
    "nvlink_total_ratom_data_transmitted",
)

COUNTER_NAMES = THROUGHPUT_COUNTERS + USER_COUNTERS + TOTAL_COUNTERS

#: user counter -> total counter it can never exceed
USER_TOTAL_PAIRS = dict(zip(USER_COUNTERS, TOTAL_COUNTERS))

PULL_KINDS = ("explicit_copy", "probe")
PUSH_KINDS = ("uvm_access",)
TRANSFER_KINDS = PULL_KINDS + PUSH_KINDS


def estimate_throughput(transfer_bytes: int, measured_time_s: float) -> float:
    """Timing-only throughput estimate: bytes moved over measured seconds.

    The counter substitute when profiling is blocked: issue a fixed-size
    transfer, time it, divide.
    """
    if transfer_bytes < 0:
        raise ValidationError("transfer_bytes must be non-negative")
    if transfer_bytes == 0:
        return 0.0
    if measured_time_s <= 0:
        raise ValidationError("measured_time_s must be positive")
    return transfer_bytes / measured_time_s


def read_cost_ns(profile, names) -> float:
    """Simulated cost of one counter read; throughput counters double it."""
    wanted = COUNTER_NAMES if names is None else tuple(names)
    factor = 2.0 if any(n in THROUGHPUT_COUNTERS for n in wanted) else 1.0
    return profile.counter_read_cost_ns * factor


@dataclass
class CounterSnapshot:
    """One read of a GPU's counters at a simulated instant.

    ``values`` maps counter name to a per-slot tuple (aggregation off) or a
    scalar (aggregation on). Byte counters are ints; throughput counters are
    floats in bytes/second.
    """

    gpu: int
    time_s: float
    aggregated: bool
    values: dict

    def value(self, name):
        """Scalar view of one counter (sums the per-slot vector if needed)."""
        v = self.values[name]
        return sum(v) if isinstance(v, tuple) else v

    def vector(self, name) -> tuple:
        v = self.values[name]
        if not isinstance(v, tuple):
            raise ValidationError(f"snapshot of {name} was aggregated")
        return v

    def rows(self):
        """Yield (time_s, gpu, counter, slot, value) rows; slot -1 = aggregate."""
        for name in sorted(self.values):
            v = self.values[name]
            if isinstance(v, tuple):
                for slot, x in enumerate(v):
                    yield (self.time_s, self.gpu, name, slot, x)
            else:
                yield (self.time_s, self.gpu, name, -1, v)


class CounterState:
    """All counter storage for one simulated machine."""

    def __init__(self, topology: Topology, counters_enabled: bool = True):
        self.topology = topology
        self.counters_enabled = counters_enabled
        n = topology.profile.slots_per_gpu
        self._n_slots = n
        self._total = {g: {name: [0] * n for name in TOTAL_COUNTERS}
                       for g in range(topology.n_gpus)}
        self._user: dict[tuple[int, int], dict[str, list[int]]] = {}
        self._profilers: set[tuple[int, int]] = set()
        self._tp_marks: dict[tuple[int, int], tuple[int, tuple, tuple]] = {}

    # -- profiler registry ----------------------------------------------------

    def register_profiler(self, pid: int, gpu: int) -> None:
        if not self.counters_enabled:
            raise CountersDisabledError(
                "counter access is disabled on this machine")
        self.topology._check_gpu(gpu)
        self._profilers.add((pid, gpu))

    def is_profiler(self, pid: int, gpu: int) -> bool:
        return (pid, gpu) in self._profilers

    def profiler_gpus(self) -> set[int]:
        return {g for _, g in self._profilers}

    # -- accounting (true state; no noise, no cost) ---------------------------

    def _user_bank(self, pid: int, gpu: int) -> dict[str, list[int]]:
        key = (pid, gpu)
        if key not in self._user:
            self._user[key] = {name: [0] * self._n_slots for name in USER_COUNTERS}
        return self._user[key]

    def account_transfer(self, src: int, dst: int, pid: int, kind: str,
                         schedule: PacketSchedule) -> None:
        """Apply one transfer's wire traffic to both endpoints' counters."""
        if kind not in TRANSFER_KINDS:
            raise ValidationError(f"unknown transfer kind {kind!r}")
        try:
            src_slots = self.topology._slot_ids[(src, dst)]
            dst_slots = self.topology._slot_ids[(dst, src)]
        except KeyError:
            src_slots = self.topology.link_slots(src, dst)
            dst_slots = self.topology.link_slots(dst, src)
        src_total = self._total[src]
        dst_total = self._total[dst]
        src_user = self._user_bank(pid, src)
        dst_user = self._user_bank(pid, dst)

        wire = schedule.per_slot_wire_bytes
        payload = schedule.per_slot_payload_bytes
        pull = kind in PULL_KINDS
        tot_tx = src_total["nvlink_total_data_transmitted"]
        tot_rx = dst_total["nvlink_total_data_received"]
        usr_tx = src_user["nvlink_user_data_transmitted"]
        usr_rx = dst_user["nvlink_user_data_received"]
        if pull:
            tot_resp = dst_total["nvlink_total_response_data_received"]
            usr_resp = dst_user["nvlink_user_response_data_received"]
        else:
            tot_write = src_total["nvlink_total_write_data_transmitted"]
            usr_write = src_user["nvlink_user_write_data_transmitted"]
        for i, w in enumerate(wire):
            if w == 0:
                continue
            s_slot, d_slot = src_slots[i], dst_slots[i]
            p = payload[i]
            tot_tx[s_slot] += w
            tot_rx[d_slot] += w
            usr_tx[s_slot] += p
            usr_rx[d_slot] += p
            if pull:
                tot_resp[d_slot] += w
                usr_resp[d_slot] += p
            else:
                tot_write[s_slot] += w
                usr_write[s_slot] += p

        if pull:
            # Read request: one 2-flit control packet dst -> src on the
            # link's first slot. Pure header traffic: totals only.
            req = REQUEST_PACKET_BYTES
            dst_total["nvlink_total_data_transmitted"][dst_slots[0]] += req
            src_total["nvlink_total_data_received"][src_slots[0]] += req

    def accrue_external_rx(self, gpu: int, per_link_slot_bytes) -> None:
        """Credit stray receive bytes (cross-VM residue) onto a GPU's totals.

        ``per_link_slot_bytes`` maps local slot id -> byte count.
        """
        bank = self._total[gpu]["nvlink_total_data_received"]
        for slot, amount in per_link_slot_bytes.items():
            if amount > 0:
                bank[slot] += int(amount)

    # -- reads ----------------------------------------------------------------

    def peek(self, gpu: int, pid: int | None = None) -> dict[str, tuple]:
        """True per-slot values, no noise, no cost, no registration needed.

        Intended for offline analysis and invariant checks, not for simulated
        attackers (those go through the engine's counter-read action).
        """
        self.topology._check_gpu(gpu)
        out = {name: tuple(vals) for name, vals in self._total[gpu].items()}
        bank = self._user.get((pid, gpu)) if pid is not None else None
        for name in USER_COUNTERS:
            vals = bank[name] if bank is not None else [0] * self._n_slots
            out[name] = tuple(vals)
        return out

    def snapshot(self, gpu: int, reader_pid: int, time_ns: int,
                 aggregation: bool = False, names=None,
                 gauss=None, noise_sigma: float = 0.0) -> CounterSnapshot:
        """Build the snapshot a profiler observes (noisy, monotone clamped).

        Measurement noise perturbs each per-slot byte value with sigma scaled
        by 1/sqrt(slots) so the aggregate keeps the profile's calibrated
        sigma. User counters are clamped to their total counterpart so the
        user <= total invariant survives noise. The caller (engine) charges
        the read cost and enforces causality.
        """
        if not self.counters_enabled:
            raise CountersDisabledError(
                "counter access is disabled on this machine")
        self.topology._check_gpu(gpu)
        if not self.is_profiler(reader_pid, gpu):
            raise SimulationError(
                f"process {reader_pid} is not a registered profiler on GPU {gpu}")
        wanted = tuple(COUNTER_NAMES if names is None else names)
        unknown = [n for n in wanted if n not in COUNTER_NAMES]
        if unknown:
            raise ValidationError(f"unknown counters {unknown}")

        slot_sigma = noise_sigma / math.sqrt(self._n_slots)

        def noisy(true_vals):
            if gauss is None or slot_sigma <= 0:
                return tuple(true_vals)
            return tuple(max(0, round(v + slot_sigma * gauss.next()))
                         for v in true_vals)

        raw: dict[str, tuple] = {}
        total_cache: dict[str, tuple] = {}
        for name in wanted:
            if name in THROUGHPUT_COUNTERS:
                continue
            if name in TOTAL_COUNTERS:
                total_cache[name] = noisy(self._total[gpu][name])
                raw[name] = total_cache[name]
        user_bank = self._user.get((reader_pid, gpu))
        for name in wanted:
            if name in USER_COUNTERS:
                true_vals = (user_bank[name] if user_bank is not None
                             else [0] * self._n_slots)
                vals = noisy(true_vals)
                cap_name = USER_TOTAL_PAIRS[name]
                cap = total_cache.get(cap_name)
                if cap is None:
                    cap = noisy(self._total[gpu][cap_name])
                raw[name] = tuple(min(v, c) for v, c in zip(vals, cap))

        if any(n in THROUGHPUT_COUNTERS for n in wanted):
            raw.update(self._throughput(gpu, reader_pid, time_ns, wanted,
                                        gauss, slot_sigma))

        values = {name: (sum(v) if aggregation else v) for name, v in raw.items()}
        return CounterSnapshot(gpu=gpu, time_s=time_ns / 1e9,
                               aggregated=aggregation, values=values)

    def _throughput(self, gpu: int, reader_pid: int, time_ns: int, wanted,
                    gauss, slot_sigma: float) -> dict[str, tuple]:
        key = (reader_pid, gpu)
        rx_now = tuple(self._total[gpu]["nvlink_total_data_received"])
        tx_now = tuple(self._total[gpu]["nvlink_total_data_transmitted"])
        last_ns, rx_mark, tx_mark = self._tp_marks.get(
            key, (0, (0,) * self._n_slots, (0,) * self._n_slots))
        elapsed_s = (time_ns - last_ns) / 1e9
        out = {}
        for name, now, mark in ((RECEIVE_THROUGHPUT, rx_now, rx_mark),
                                (TRANSMIT_THROUGHPUT, tx_now, tx_mark)):
            if name not in wanted:
                continue
            rates = []
            for a, b in zip(now, mark):
                delta = a - b
                if gauss is not None and slot_sigma > 0:
                    delta += slot_sigma * gauss.next()
                rates.append(max(0.0, delta / elapsed_s) if elapsed_s > 0 else 0.0)
            out[name] = tuple(rates)
        self._tp_marks[key] = (time_ns, rx_now, tx_now)
        return out
