# Custom exceptions for beamfuse
#
# Every error carries the process exit code the CLI reports for it.

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CONSISTENCY = 5


class BeamFuseError(Exception):
    """Base class for all beamfuse-specific errors."""
    exit_code = EXIT_FAILURE


class ConfigError(BeamFuseError):
    """Raised for invalid configuration keys, values or infeasible setups."""
    exit_code = EXIT_CONFIG

    def __init__(self, message, key=None):
        self.key = key
        if key:
            super().__init__(f"{message} (key '{key}')")
        else:
            super().__init__(message)


class DatasetIOError(BeamFuseError):
    """Raised when a dataset, label or checkpoint file cannot be read or written."""
    exit_code = EXIT_IO

    def __init__(self, message="Dataset I/O failed", path=None, cause=None):
        self.path = path
        self.cause = cause
        text = message
        if path:
            text = f"{text}: {path}"
        if cause:
            text = f"{text} ({cause})"
        super().__init__(text)


class NumericError(BeamFuseError):
    """Raised when an operation meets or produces non-finite values."""
    exit_code = EXIT_NUMERIC

    def __init__(self, message="Non-finite value encountered", term=None, batch=None):
        self.term = term
        self.batch = batch
        details = []
        if term is not None:
            details.append(f"term={term}")
        if batch is not None:
            details.append(f"batch={batch}")
        if details:
            super().__init__(f"{message} [{', '.join(details)}]")
        else:
            super().__init__(message)


class ConsistencyError(BeamFuseError):
    """Raised when two artifacts disagree (config hash, digest, statistics)."""
    exit_code = EXIT_CONSISTENCY

    def __init__(self, message, expected=None, found=None):
        self.expected = expected
        self.found = found
        if expected is not None or found is not None:
            super().__init__(f"{message}: expected {expected}, found {found}")
        else:
            super().__init__(message)


class ShapeError(BeamFuseError):
    """Raised when tensor or array dimensions do not agree."""
    exit_code = EXIT_NUMERIC

    def __init__(self, op, expected, got):
        self.op = op
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: expected shape {expected}, got {got}")


class DataError(BeamFuseError):
    """Raised for invalid data values (NaN power, non-binary targets, misaligned inputs)."""
    exit_code = EXIT_NUMERIC


class GenerationError(BeamFuseError):
    """Raised when the simulator cannot build a requested scene or scan."""
    exit_code = EXIT_CONFIG


class UsageError(BeamFuseError):
    """Raised when an API is called outside its contract."""
    exit_code = EXIT_CONFIG
