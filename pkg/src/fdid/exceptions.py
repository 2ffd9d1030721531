"""Exception hierarchy. Each carries the CLI exit code it maps to."""


class FdidError(Exception):
    exit_code = 4


class InvalidArgument(FdidError, ValueError):
    exit_code = 2


class InvalidDataset(FdidError, ValueError):
    exit_code = 3


class IngestionError(InvalidDataset):
    """Schema violations in panel files; ``problems`` lists every offence."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ReconstructionError(FdidError):
    def __init__(self, message, unit_ids=()):
        self.unit_ids = list(unit_ids)
        super().__init__(message)


class ModelFailure(FdidError):
    pass


class SeparationError(ModelFailure):
    pass


class CrossfitError(FdidError):
    pass


class DgpFailure(FdidError):
    pass


class ScenarioFailure(FdidError):
    pass
