"""Exception types raised across the package."""


class KSError(Exception):
    """Base class for all solver errors."""


class SingularMatrix(KSError):
    pass


class InvalidMesh(KSError):
    pass


class NonFinite(KSError):
    """A time-stepping loop produced NaN or inf."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PicardDiverged(KSError):
    def __init__(self, message, iterations=None, history=None):
        super().__init__(message)
        self.iterations = iterations
        self.history = history or []


class MaxIterReached(KSError):
    """Raised only on request; by default the drivers return a flagged report."""

    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


class ConfigError(KSError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class MissingKey(ConfigError):
    pass


class IoError(KSError, OSError):
    """Reading or writing a result file failed."""
