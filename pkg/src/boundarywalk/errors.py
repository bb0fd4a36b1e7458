"""Exception hierarchy. The CLI maps each family to a distinct exit code."""


class BoundaryWalkError(Exception):
    exit_code = 1


class ConfigError(BoundaryWalkError, ValueError):
    """Configuration failed schema validation. ``path`` names the offending key."""

    exit_code = 2

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class AssumptionViolation(BoundaryWalkError):
    """A hypothesis of the main expansion theorem does not hold for the inputs."""

    exit_code = 3

    def __init__(self, message: str, assumption: int):
        self.assumption = assumption
        super().__init__(f"assumption {assumption} violated: {message}")


class NumericalRefusal(BoundaryWalkError):
    """A numerical routine declined to return a result it cannot vouch for."""

    exit_code = 4


class StepCapExceeded(NumericalRefusal):
    """A simulated path ran past its step cap without crossing."""


class OutOfRangeError(BoundaryWalkError, ValueError):
    pass
