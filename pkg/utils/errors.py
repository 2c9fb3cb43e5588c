from typing import Optional


class KnobtuneError(Exception):
    """base class for everything knobtune raises on purpose"""


class ConfigurationError(KnobtuneError, ValueError):
    """bad knob space, scenario file, or settings"""


class NumericalError(KnobtuneError):
    """covariance could not be factorized even at max jitter"""


class ExhaustedError(KnobtuneError):
    """no unsampled knob settings left to pick from"""


class PhaseCompleteError(KnobtuneError):
    """sampler asked for a sample after the phase budget was spent"""


class ProtocolError(KnobtuneError):
    """wire message could not be decoded or arrived out of order"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class OracleInfeasibleError(KnobtuneError):
    """no knob setting satisfies the constraints on the true surfaces"""


class UndefinedQoSError(KnobtuneError, ZeroDivisionError):
    """QoS ratio with a zero denominator"""


class SessionError(KnobtuneError):
    """transport failed underneath a running session"""
