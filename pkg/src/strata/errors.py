"""Exception types raised across the storage stack."""


class StorageError(Exception):
    """Base class for all errors raised by this package."""


# -- block geometry / layouts -------------------------------------------------

class NotPowerOfTwo(StorageError):
    pass


class InvalidLayout(StorageError):
    pass


class ExtentOutsideLayout(StorageError):
    pass


class UnknownContainer(StorageError):
    pass


class UnknownObject(StorageError):
    pass


class AlreadyExists(StorageError):
    pass


# -- devices ------------------------------------------------------------------

class DeviceFailed(StorageError):
    pass


class OutOfCapacity(StorageError):
    pass


class BadLength(StorageError):
    pass


class UnrecoverableLoss(StorageError):
    """More failures than the layout's parity can mask.

    `objects` carries the affected object ids when known.
    """

    def __init__(self, msg, objects=()):
        super().__init__(msg)
        self.objects = list(objects)


# -- indices ------------------------------------------------------------------

class UnknownIndex(StorageError):
    pass


# -- transactions -------------------------------------------------------------

class InvalidState(StorageError):
    pass


class LogWriteFailed(StorageError):
    pass


class CorruptLog(StorageError):
    pass


# -- HSM ----------------------------------------------------------------------

class TargetFull(StorageError):
    pass


# -- function shipping ---------------------------------------------------------

class UnknownFunction(StorageError):
    pass


class UnknownTarget(StorageError):
    pass


class CombinerNotAssociative(StorageError):
    pass


class ResultTooLarge(StorageError):
    pass


# -- windows ------------------------------------------------------------------

class OutOfBounds(StorageError):
    pass


class UnknownWindow(StorageError):
    pass


class SizeMismatch(StorageError):
    pass


# -- streams ------------------------------------------------------------------

class InvalidDescriptor(StorageError):
    pass


class SchemaMismatch(StorageError):
    pass


class StreamTerminated(StorageError):
    pass


class AlreadyAttached(StorageError):
    pass


# -- harness ------------------------------------------------------------------

class NodeDown(StorageError):
    pass


class Partitioned(StorageError):
    pass


class BadConfig(StorageError):
    pass


class DuplicatePlugin(StorageError):
    pass


class CapacityExceeded(StorageError):
    pass


class CorruptExport(StorageError):
    pass


class VerificationError(StorageError):
    """A benchmark workload failed its self-check."""


class SimulatedCrash(BaseException):
    """Raised by crash-injection hooks.

    Derives from BaseException so engine code cannot swallow it with a broad
    `except Exception`.
    """
