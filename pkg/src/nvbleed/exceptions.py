"""Exception taxonomy. The CLI maps these onto distinct exit codes."""


class NVBleedError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(NVBleedError):
    """Bad configuration, topology, profile, scenario, or argument values."""

    exit_code = 3


class SimulationError(NVBleedError):
    """Illegal action at simulation time (bad peer, VM violation, ...)."""

    exit_code = 3


class CountersDisabledError(SimulationError):
    """Counter read attempted while the platform has counters disabled."""

    exit_code = 5


class CalibrationError(NVBleedError):
    """Calibration targets unreachable within the search bounds."""

    exit_code = 4


class HandshakeError(NVBleedError):
    """Covert-channel handshake failed (e.g. receiver absent, timeout)."""

    exit_code = 4


class AnalysisError(NVBleedError):
    """An analysis step cannot produce a result (empty trace, no integer
    factorization, inseparable calibration distributions, ...)."""

    exit_code = 4
