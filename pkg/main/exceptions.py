# main/exceptions.py
"""Exception hierarchy shared by every dosbench app."""


class DosbenchError(Exception):
    """Base class for all benchmark errors."""


class PacketSizeError(DosbenchError, ValueError):
    """Payload does not fit the configured MTU budget."""


class PrivilegeError(DosbenchError, PermissionError):
    """A socket mode needs privileges the process does not have."""

    def __init__(self, mode, detail=''):
        self.mode = mode
        message = f"transport mode '{mode}' requires elevated network privileges (CAP_NET_RAW or root)"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class EndpointError(DosbenchError, OSError):
    """An address could not be resolved, bound or reached."""


class NumericError(DosbenchError, ArithmeticError):
    """Non-finite values reached a numeric kernel."""


class UndefinedMetricError(DosbenchError, ValueError):
    """A metric was requested on a series too short to define it."""


class TowWraparoundError(UndefinedMetricError):
    """Sampling timestamps wrapped at the GPS week boundary."""


class ExperimentError(DosbenchError, RuntimeError):
    """An experiment could not produce any usable run."""
