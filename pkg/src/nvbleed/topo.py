"""Platform profiles and interconnect topologies.

A :class:`PlatformProfile` captures the per-platform link constants (slot count
and bandwidth, API overheads, contention shape, measurement-noise calibration).
A :class:`Topology` is an undirected multi-slot link graph over GPUs plus a
GPU->VM assignment.

Profile and topology files are JSON documents; see :func:`profile_from_file`
and :func:`topology_from_file` for the schema.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace
from importlib import resources
from pathlib import Path

from .exceptions import ValidationError
from .util import read_json, write_json

#: Slot counts mandated by the interconnect generation.
SLOTS_BY_VERSION = {1: 4, 2: 6}

PROFILE_NAMES = ("gcp", "dgx")
TOPOLOGY_PRESETS = ("pair", "ring4", "ring8", "hypercube8")

#: Canonical VM split used by the cross-VM scenario on a 4-GPU box.
CROSS_VM_SPLIT = (0, 0, 1, 1)


@dataclass(frozen=True)
class PlatformProfile:
    """Link-layer constants for one platform.

    Timing fields are nanoseconds; bandwidth is bytes/second per slot.
    ``timing_noise_ns`` / ``counter_noise_bytes`` are measurement-noise
    standard deviations (they perturb observed values, never the schedule).
    ``profiler_dilation`` slows transfers that run inside a start/stop
    profiler bracket (serialized-capture overhead).
    """

    name: str
    nvlink_version: int
    slots_per_gpu: int
    slots_per_peer_link: int
    slot_bandwidth_bytes_per_s: float
    probe_overhead_ns: float
    counter_read_cost_ns: float
    contention_plateau: float
    contention_floor: float
    timing_noise_ns: float
    counter_noise_bytes: float
    profiler_dilation: float = 10.0
    nop_cost_ns: float = 10.0
    calibrated_against: dict | None = None

    def __post_init__(self):
        if self.nvlink_version not in SLOTS_BY_VERSION:
            raise ValidationError(f"unsupported nvlink_version {self.nvlink_version}")
        want = SLOTS_BY_VERSION[self.nvlink_version]
        if self.slots_per_gpu != want:
            raise ValidationError(
                f"nvlink_version {self.nvlink_version} requires {want} slots per GPU, "
                f"got {self.slots_per_gpu}")
        if not (1 <= self.slots_per_peer_link <= self.slots_per_gpu):
            raise ValidationError("slots_per_peer_link out of range")
        if self.slot_bandwidth_bytes_per_s <= 0:
            raise ValidationError("slot bandwidth must be positive")
        if self.probe_overhead_ns < 0 or self.counter_read_cost_ns < 0:
            raise ValidationError("overhead costs must be non-negative")
        if not (self.contention_plateau >= self.contention_floor >= 1.10):
            raise ValidationError(
                "need contention_plateau >= contention_floor >= 1.10")
        if self.timing_noise_ns < 0 or self.counter_noise_bytes < 0:
            raise ValidationError("noise sigmas must be non-negative")
        if self.profiler_dilation < 1.0:
            raise ValidationError("profiler_dilation must be >= 1")
        if self.nop_cost_ns <= 0:
            raise ValidationError("nop_cost_ns must be positive")

    def with_updates(self, **kwargs) -> "PlatformProfile":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def get_profile(name: str) -> PlatformProfile:
    """Load one of the shipped, pre-calibrated profiles ("gcp" or "dgx")."""
    if name not in PROFILE_NAMES:
        raise ValidationError(f"unknown profile {name!r}; choose from {PROFILE_NAMES}")
    ref = resources.files("nvbleed.data").joinpath(f"profile_{name}.json")
    with resources.as_file(ref) as path:
        return profile_from_file(path)


def profile_from_file(path: str | Path) -> PlatformProfile:
    """Read a profile JSON file.

    Schema: a flat object whose keys are exactly the PlatformProfile fields,
    e.g. {"name": "gcp", "nvlink_version": 2, "slots_per_gpu": 6, ...}.
    """
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise ValidationError(f"profile file {path} must contain a JSON object")
    fields = {f for f in PlatformProfile.__dataclass_fields__}
    unknown = set(raw) - fields
    if unknown:
        raise ValidationError(f"profile file {path}: unknown keys {sorted(unknown)}")
    try:
        return PlatformProfile(**raw)
    except TypeError as exc:
        raise ValidationError(f"profile file {path}: {exc}") from exc


def profile_to_file(profile: PlatformProfile, path: str | Path) -> None:
    write_json(path, profile.to_dict())


_PRESET_EDGES = {
    "pair": [(0, 1)],
    "ring4": [(0, 1), (1, 2), (2, 3), (0, 3)],
    "ring8": [(i, (i + 1) % 8) for i in range(8)],
    # Two fully-connected quads plus a perfect matching between them:
    # 16 edges, uniform degree 4.
    "hypercube8": (
        [(a, b) for a in range(4) for b in range(a + 1, 4)]
        + [(a, b) for a in range(4, 8) for b in range(a + 1, 8)]
        + [(i, i + 4) for i in range(4)]
    ),
}


class Topology:
    """Undirected multi-slot link graph over ``n_gpus`` GPUs.

    Every edge carries ``profile.slots_per_peer_link`` physical slots. Local
    slot indices on each GPU are assigned deterministically: peers in
    ascending order, each taking the next contiguous block of slot ids.
    """

    def __init__(self, profile: PlatformProfile, n_gpus: int,
                 edges, vm_assignment=None, preset: str | None = None):
        if n_gpus < 2:
            raise ValidationError("need at least 2 GPUs")
        norm = []
        seen = set()
        for a, b in edges:
            if not (0 <= a < n_gpus and 0 <= b < n_gpus) or a == b:
                raise ValidationError(f"bad edge ({a}, {b})")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        if vm_assignment is None:
            vm_assignment = (0,) * n_gpus
        vm_assignment = tuple(int(v) for v in vm_assignment)
        if len(vm_assignment) != n_gpus:
            raise ValidationError("vm_assignment must list one VM id per GPU")

        self.profile = profile
        self.n_gpus = n_gpus
        self.edges = tuple(sorted(norm))
        self.vm_assignment = vm_assignment
        self.preset = preset

        self._neighbors: dict[int, tuple[int, ...]] = {}
        adj: dict[int, list[int]] = {g: [] for g in range(n_gpus)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        k = profile.slots_per_peer_link
        self._slot_ids: dict[tuple[int, int], tuple[int, ...]] = {}
        for g in range(n_gpus):
            peers = tuple(sorted(adj[g]))
            self._neighbors[g] = peers
            if len(peers) * k > profile.slots_per_gpu:
                raise ValidationError(
                    f"GPU {g}: {len(peers)} peers x {k} slots exceeds the "
                    f"{profile.slots_per_gpu}-slot budget of profile {profile.name!r}")
            for i, p in enumerate(peers):
                self._slot_ids[(g, p)] = tuple(range(i * k, (i + 1) * k))

    # -- queries ------------------------------------------------------------

    def neighbors(self, gpu: int) -> tuple[int, ...]:
        self._check_gpu(gpu)
        return self._neighbors[gpu]

    def has_link(self, a: int, b: int) -> bool:
        self._check_gpu(a)
        self._check_gpu(b)
        return (min(a, b), max(a, b)) in set(self.edges)

    def link_slots(self, gpu: int, peer: int) -> tuple[int, ...]:
        """Local slot ids on ``gpu`` for its link to ``peer``."""
        self._check_gpu(gpu)
        self._check_gpu(peer)
        try:
            return self._slot_ids[(gpu, peer)]
        except KeyError:
            raise ValidationError(f"GPUs {gpu} and {peer} are not connected") from None

    def same_vm(self, a: int, b: int) -> bool:
        return self.vm_assignment[a] == self.vm_assignment[b]

    def degree(self, gpu: int) -> int:
        return len(self.neighbors(gpu))

    def _check_gpu(self, gpu: int) -> None:
        if not 0 <= gpu < self.n_gpus:
            raise ValidationError(f"GPU id {gpu} out of range 0..{self.n_gpus - 1}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "n_gpus": self.n_gpus,
            "edges": [list(e) for e in self.edges],
            "vm_assignment": list(self.vm_assignment),
            "profile": self.profile.name,
        }

    def describe(self) -> dict:
        """Human-oriented summary used by the ``topo`` subcommand."""
        return {
            **self.to_dict(),
            "edge_count": len(self.edges),
            "degrees": [self.degree(g) for g in range(self.n_gpus)],
            "slots_per_link": self.profile.slots_per_peer_link,
            "slot_bandwidth_bytes_per_s": self.profile.slot_bandwidth_bytes_per_s,
            "link_slot_map": {
                f"{g}->{p}": list(self.link_slots(g, p))
                for g in range(self.n_gpus) for p in self.neighbors(g)
            },
        }


def build_topology(preset: str, profile: PlatformProfile,
                   vm_assignment=None) -> Topology:
    """Instantiate one of the named presets on the given profile."""
    if preset not in _PRESET_EDGES:
        raise ValidationError(
            f"unknown topology preset {preset!r}; choose from {TOPOLOGY_PRESETS}")
    edges = _PRESET_EDGES[preset]
    n = 1 + max(max(a, b) for a, b in edges)
    return Topology(profile, n, edges, vm_assignment, preset=preset)


def peer_slots(topology: Topology, a: int, b: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Local slot ids of the a<->b link on each endpoint: (a_slots, b_slots)."""
    return topology.link_slots(a, b), topology.link_slots(b, a)


def topology_from_file(path: str | Path, profile: PlatformProfile) -> Topology:
    """Read a topology JSON file.

    Schema: either {"preset": "ring8", "vm_assignment": [...]?} or a custom
    graph {"n_gpus": N, "edges": [[a, b], ...], "vm_assignment": [...]?}.
    """
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise ValidationError(f"topology file {path} must contain a JSON object")
    vm = raw.get("vm_assignment")
    if "preset" in raw and raw["preset"]:
        return build_topology(raw["preset"], profile, vm)
    if "edges" not in raw or "n_gpus" not in raw:
        raise ValidationError(
            f"topology file {path} needs either a preset or n_gpus+edges")
    return Topology(profile, int(raw["n_gpus"]),
                    [tuple(e) for e in raw["edges"]], vm)


def topology_to_file(topology: Topology, path: str | Path) -> None:
    write_json(path, topology.to_dict())
