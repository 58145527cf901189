"""Exception types shared across the pipeline."""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, shapes, schemas)."""


class ChecksumError(DataError):
    """A binary artifact failed its integrity check."""


class ProvenanceError(RuntimeError):
    """Artifacts from different configurations were mixed."""
