"""Exception types shared across the package."""


class SkySchedError(Exception):
    """Base class for all package-specific errors."""


class MalformedTraceError(SkySchedError):
    """Trace file cannot be parsed (bad header, bad row, empty file)."""


class InconsistentTraceError(SkySchedError):
    """Trace parses but violates structural invariants (missing slots or ids)."""


class InvalidGeometryError(SkySchedError):
    """Degenerate link geometry, e.g. zero transmitter-receiver distance."""


class InvalidStateError(SkySchedError):
    """Stale or mismatched internal state, e.g. a tape reused after an update."""


class EpisodeExhaustedError(SkySchedError):
    """step() called after the episode's final slot."""


class ConfigError(SkySchedError):
    """Experiment configuration failed validation; message names the field."""
