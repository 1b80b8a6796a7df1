class TpmraError(Exception):
    pass


class ProtocolError(TpmraError):
    """Peer violated the message protocol (unknown type, sequence gap, wrong phase)."""


class FramingError(ProtocolError):
    """Bytes do not form a complete, well-sized frame."""


class IntegrityError(ProtocolError):
    """Frame check sequence does not match."""


class TransportError(TpmraError):
    pass


class EndOfChannel(TransportError):
    pass


class SyncError(TpmraError):
    """Watchdog expired before the parties synchronized."""

    def __init__(self, iterations: int, message: str | None = None):
        super().__init__(message or f"sync_error after {iterations} iterations")
        self.iterations = iterations
