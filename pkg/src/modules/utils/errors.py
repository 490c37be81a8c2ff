class GkaeError(Exception):
    """Root of every error raised by this package."""


class ConfigError(GkaeError, ValueError):
    """A parameter or pre-condition is out of its valid range."""


class CoLocatedNodesError(ConfigError):
    """Two transmitters/receivers share a location, so d = 0."""


class NormalizationOverflowError(ConfigError):
    """A UAV left the normalization box by more than the allowed slack."""


class HorizonError(ConfigError):
    """A horizon or window asks for more timesteps than the data holds."""


class DatasetFormatError(GkaeError):
    """A dataset, checkpoint or metrics file could not be parsed."""


class VersionMismatchError(DatasetFormatError):
    def __init__(self, kind, found, supported):
        super().__init__(f"Unsupported {kind} version {found!r} (supported: {supported})")
        self.kind = kind
        self.found = found
        self.supported = supported


class ArtifactMissingError(GkaeError, FileNotFoundError):
    """An upstream artifact (dataset, checkpoint, predictions) is absent."""


class GateFailure(GkaeError):
    def __init__(self, gates):
        self.gates = list(gates)
        super().__init__(f"Acceptance gate(s) failed: {', '.join(self.gates)}")


class TrainingDivergedError(GkaeError):
    """A training loss became non-finite."""
