"""Exception types shared across the spectwin package."""


class SpectwinError(Exception):
    """Base class for all spectwin errors."""


# --- IQ file / buffer errors -------------------------------------------------

class MalformedFile(SpectwinError):
    """IQ file is unreadable or its byte length is not a whole number of samples."""


class NonFiniteSample(SpectwinError):
    """A NaN or Inf was found where finite samples are required."""


class IoFailure(SpectwinError):
    """Underlying file write failed."""


class EmptyBuffer(SpectwinError):
    """Operation requires a nonempty buffer."""


class BufferTooShort(SpectwinError):
    """Buffer shorter than the requested transform size."""


class ZeroWindow(SpectwinError):
    """All-zero window cannot be power-normalized; caller should discard it."""


# --- generator / mixing errors ----------------------------------------------

class InvalidParams(SpectwinError):
    """Generator or operation parameters violate their invariants."""


class InfeasibleSINR(SpectwinError):
    """Requested SINR exceeds the requested SNR; no interferer scale exists."""


class LengthMismatch(SpectwinError):
    """Interferer cannot be aligned or extended to the signal length."""


# --- scenario errors ----------------------------------------------------------

class OutOfRange(SpectwinError):
    """Queried time lies outside the scenario duration."""


class CoincidentNodes(SpectwinError):
    """Path loss is undefined for two nodes at the same position."""


class EmptyInput(SpectwinError):
    """Tap approximation needs at least one tap with nonzero power."""


# --- channel errors -----------------------------------------------------------

class DelayOverflow(SpectwinError):
    """A rounded tap delay reaches past the end of the buffer."""


class TimelineTooShort(SpectwinError):
    """Tap timeline does not cover every emulation epoch."""


class TemplateTooLong(SpectwinError):
    """Correlation template is longer than the received buffer."""


# --- dataset errors -----------------------------------------------------------

class CellTooSmall(SpectwinError):
    """A stratification cell has fewer records than the splits require."""


class FormatVersionMismatch(SpectwinError):
    """File magic or format version is not supported."""


class CorruptRecord(SpectwinError):
    """Record failed its checksum or was truncated."""


# --- model / inference errors --------------------------------------------------

class ShapeMismatch(SpectwinError):
    """Tensor shapes do not compose for the requested operation."""


class NonFiniteActivation(SpectwinError):
    """Forward pass produced NaN or Inf activations."""


class ShapeCompositionError(SpectwinError):
    """Weights file entries do not compose into the expected architecture."""


class NonFiniteTensor(SpectwinError):
    """A weights tensor contains NaN or Inf."""


class BatchSizeMismatch(SpectwinError):
    """Vote update received a batch of the wrong size."""


# --- control plane errors ------------------------------------------------------

class IllegalTransition(SpectwinError):
    """Base-station state machine was asked to perform a forbidden transition."""
