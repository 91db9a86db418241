"""Wire format and timing model for a single multi-slot link.

Payloads move as 16-byte flits grouped into packets: up to 16 payload flits
(256 B) plus 2 overhead flits (32 B) per packet. The smallest transfer unit
is 32 B (two flits), so payloads are padded up to a 32-byte boundary on the
wire. Packets are striped round-robin over the link's slots, and a transfer
completes when its most-loaded slot drains. Every transfer also triggers a
single 2-flit request packet in the reverse direction.

Transfer latency is ``probe_overhead_ns`` (API/launch cost) plus the drain
time of the most-loaded slot, scaled by a contention multiplier and, when a
profiler bracket is active on either endpoint, by ``profiler_dilation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .exceptions import CalibrationError, ValidationError
from .topo import PlatformProfile

FLIT_BYTES = 16
UNIT_BYTES = 32                  # minimum transfer granularity (2 flits)
PACKET_PAYLOAD_FLITS = 16
PACKET_OVERHEAD_FLITS = 2
PACKET_PAYLOAD_BYTES = PACKET_PAYLOAD_FLITS * FLIT_BYTES    # 256
PACKET_OVERHEAD_BYTES = PACKET_OVERHEAD_FLITS * FLIT_BYTES  # 32
REQUEST_PACKET_BYTES = PACKET_OVERHEAD_BYTES                # 32
UNITS_PER_PACKET = PACKET_PAYLOAD_BYTES // UNIT_BYTES       # 8

#: Contending traffic at or above this many bytes saturates the multiplier.
CONTENTION_SATURATION_BYTES = PACKET_PAYLOAD_BYTES


def wire_payload_bytes(payload_bytes: int) -> int:
    """Payload bytes as seen on the wire: padded up to a 32-byte unit."""
    if payload_bytes < 0:
        raise ValidationError("payload_bytes must be non-negative")
    if payload_bytes == 0:
        return 0
    return UNIT_BYTES * math.ceil(payload_bytes / UNIT_BYTES)


@dataclass(frozen=True)
class PacketSchedule:
    """Static layout of one transfer across a link's slots.

    Derived totals are precomputed fields (instances are cached and read on
    the simulator's hot path).
    """

    payload_bytes: int
    slots: int
    packet_count: int
    per_slot_payload_bytes: tuple[int, ...]
    per_slot_overhead_bytes: tuple[int, ...]
    per_slot_wire_bytes: tuple[int, ...]
    wire_payload_bytes: int
    wire_overhead_bytes: int
    wire_bytes: int
    max_slot_wire_bytes: int


@lru_cache(maxsize=65536)
def schedule_transfer(payload_bytes: int, slots: int) -> PacketSchedule:
    """Stripe a payload over ``slots`` slots, packet k on slot k mod slots."""
    if slots < 1:
        raise ValidationError("slots must be >= 1")
    wire_payload = wire_payload_bytes(payload_bytes)
    units = wire_payload // UNIT_BYTES
    packets = math.ceil(units / UNITS_PER_PACKET)
    # Packet k lands on slot k % slots; every packet is full except the last,
    # so per-slot totals follow from each slot's packet count directly.
    overhead_per_slot = [0] * slots
    payload_per_slot = [0] * slots
    for s in range(slots):
        n_s = (packets - s + slots - 1) // slots if packets > s else 0
        overhead_per_slot[s] = n_s * PACKET_OVERHEAD_BYTES
        payload_per_slot[s] = n_s * PACKET_PAYLOAD_BYTES
    if packets:
        short = packets * UNITS_PER_PACKET - units   # unfilled units, 0..7
        payload_per_slot[(packets - 1) % slots] -= short * UNIT_BYTES
    wire_per_slot = tuple(p + o for p, o in zip(payload_per_slot, overhead_per_slot))
    overhead_total = packets * PACKET_OVERHEAD_BYTES
    return PacketSchedule(
        payload_bytes=payload_bytes,
        slots=slots,
        packet_count=packets,
        per_slot_payload_bytes=tuple(payload_per_slot),
        per_slot_overhead_bytes=tuple(overhead_per_slot),
        per_slot_wire_bytes=wire_per_slot,
        wire_payload_bytes=wire_payload,
        wire_overhead_bytes=overhead_total,
        wire_bytes=wire_payload + overhead_total,
        max_slot_wire_bytes=max(wire_per_slot) if wire_per_slot else 0,
    )


def contention_multiplier(profile: PlatformProfile, contending_wire_bytes: int) -> float:
    """Slowdown from concurrent traffic on the same link.

    Zero contending bytes leave the transfer untouched. Any contention costs
    at least ``contention_floor``; the penalty grows with the square root of
    the contending volume and saturates at ``contention_plateau`` once a full
    packet payload (256 B) is in flight alongside.
    """
    if contending_wire_bytes <= 0:
        return 1.0
    frac = min(1.0, contending_wire_bytes / CONTENTION_SATURATION_BYTES)
    ramp = 1.0 + (profile.contention_plateau - 1.0) * math.sqrt(frac)
    return max(profile.contention_floor, ramp)


def transfer_time_ns(profile: PlatformProfile, schedule: PacketSchedule,
                     contending_wire_bytes: int = 0, dilation: float = 1.0) -> float:
    """Latency of one transfer in nanoseconds (float; caller rounds)."""
    if schedule.packet_count == 0:
        return profile.probe_overhead_ns
    drain_ns = schedule.max_slot_wire_bytes / profile.slot_bandwidth_bytes_per_s * 1e9
    mult = contention_multiplier(profile, contending_wire_bytes)
    return profile.probe_overhead_ns + drain_ns * mult * dilation


def uncontended_transfer_ns(profile: PlatformProfile, payload_bytes: int,
                            slots: int, dilation: float = 1.0) -> float:
    """Convenience: latency with no contending traffic."""
    return transfer_time_ns(profile, schedule_transfer(payload_bytes, slots),
                            0, dilation)


# -- calibration --------------------------------------------------------------

def _measure_channel_kbps(profile: PlatformProfile, channel: str, seed: int,
                          n_bits: int) -> float:
    from . import covert  # local import: covert depends on link
    from .topo import build_topology

    topology = build_topology("pair", profile)
    result = covert.run_channel(channel, topology, n_bits=n_bits, seed=seed)
    return result.bandwidth_bps / 1e3


def _bisect_field(profile: PlatformProfile, field: str, lo: float, hi: float,
                  channel: str, target_kbps: float, seed: int, n_bits: int,
                  iters: int = 40) -> tuple[PlatformProfile, float]:
    """Find a value of ``field`` whose measured channel rate hits the target.

    Measured bandwidth decreases monotonically as the cost field grows, so a
    plain bisection on the cost converges. The rate is a step function of the
    cost (slot periods are whole nanoseconds), so we stop once the bracket is
    narrower than a tenth of a nanosecond.
    """
    f_lo = _measure_channel_kbps(profile.with_updates(**{field: lo}), channel, seed, n_bits)
    f_hi = _measure_channel_kbps(profile.with_updates(**{field: hi}), channel, seed, n_bits)
    if not (f_hi <= target_kbps <= f_lo):
        raise CalibrationError(
            f"target {target_kbps} kb/s for {channel} not bracketed by "
            f"{field} in [{lo}, {hi}] (rates [{f_hi:.3f}, {f_lo:.3f}])")
    best_val, best_rate = lo, f_lo
    if abs(f_hi - target_kbps) < abs(best_rate - target_kbps):
        best_val, best_rate = hi, f_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        rate = _measure_channel_kbps(profile.with_updates(**{field: mid}),
                                     channel, seed, n_bits)
        if abs(rate - target_kbps) < abs(best_rate - target_kbps):
            best_val, best_rate = mid, rate
        if rate > target_kbps:
            lo = mid
        else:
            hi = mid
        if hi - lo < 0.1:
            break
    return profile.with_updates(**{field: best_val}), best_rate


def calibrate_profile(profile: PlatformProfile, target_contenlink_kbps: float,
                      target_leaky_kbps: float, tolerance: float = 0.2,
                      seed: int = 7, n_bits: int = 192) -> tuple[PlatformProfile, dict]:
    """Fit the profile's timing costs to measured covert-channel rates.

    ``probe_overhead_ns`` controls the timing channel's bit period, so it is
    fitted first against the contention-channel target; ``counter_read_cost_ns``
    dominates the counter channel's period and is fitted second. Raises
    :class:`CalibrationError` if either achieved rate misses the target by
    more than ``tolerance`` (relative).
    """
    if target_contenlink_kbps <= 0 or target_leaky_kbps <= 0:
        raise CalibrationError("calibration targets must be positive")

    fitted, conten_rate = _bisect_field(
        profile, "probe_overhead_ns", 500.0, 200_000.0,
        "contenlink", target_contenlink_kbps, seed, n_bits)
    fitted, leaky_rate = _bisect_field(
        fitted, "counter_read_cost_ns", 1_000.0, 5_000_000.0,
        "leakycounterlink", target_leaky_kbps, seed, max(32, n_bits // 4))

    report = {
        "probe_overhead_ns": fitted.probe_overhead_ns,
        "counter_read_cost_ns": fitted.counter_read_cost_ns,
        "contenlink_kbps": conten_rate,
        "contenlink_target_kbps": target_contenlink_kbps,
        "contenlink_rel_err": conten_rate / target_contenlink_kbps - 1.0,
        "leakycounterlink_kbps": leaky_rate,
        "leakycounterlink_target_kbps": target_leaky_kbps,
        "leakycounterlink_rel_err": leaky_rate / target_leaky_kbps - 1.0,
        "tolerance": tolerance,
    }
    for key in ("contenlink_rel_err", "leakycounterlink_rel_err"):
        if abs(report[key]) > tolerance:
            raise CalibrationError(
                f"calibration missed: {key} = {report[key]:+.3f} "
                f"exceeds +/-{tolerance}")
    fitted = fitted.with_updates(calibrated_against={
        "contenlink_kbps": target_contenlink_kbps,
        "leakycounterlink_kbps": target_leaky_kbps,
        "tolerance": tolerance,
    })
    return fitted, report
