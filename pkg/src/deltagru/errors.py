"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class DeltaGruError(Exception):
    pass


class ModelError(DeltaGruError):
    """Problem with a float or packed model (CLI exit 2)."""


class FormatUnsupported(ModelError):
    pass


class MissingTensor(ModelError):
    pass


class BadMagic(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


class CorruptLength(ModelError):
    pass


class DimensionMismatch(DeltaGruError, ValueError):
    """Shapes disagree with the network configuration (CLI exit 3)."""


class ConfigMismatch(DeltaGruError, ValueError):
    pass


class DataError(DeltaGruError):
    """Malformed feature, logits or transcript data (CLI exit 4)."""


class EmptyReference(DataError, ValueError):
    pass


class EmptyTrace(DataError, ValueError):
    pass
