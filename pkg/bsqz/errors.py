from __future__ import annotations

from typing import Any, Dict, List, Optional


class BsqzError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(BsqzError, ValueError):
    pass


class PomdpSyntaxError(BsqzError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class PomdpSemanticError(PomdpSyntaxError):
    pass


class ModelValidationError(BsqzError, ValueError):
    def __init__(self, issues: List[Any]):
        self.issues = list(issues)
        head = "; ".join(str(i) for i in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"invalid model: {head}{more}")


class NumericalError(BsqzError, ArithmeticError):
    """Numerical failure. `diagnostics` is attached to the CLI failure file."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class ImpossibleObservationError(NumericalError):
    def __init__(self, action: int, obs: int, likelihood: float):
        self.action = action
        self.obs = obs
        self.likelihood = likelihood
        super().__init__(
            f"observation {obs} has likelihood {likelihood:.3g} after action {action}",
            {"action": action, "obs": obs, "likelihood": likelihood},
        )


class DimensionMismatchError(NumericalError, ValueError):
    pass


class RankDeficientBasisError(NumericalError):
    pass


class EmptyBeliefsError(NumericalError, ValueError):
    pass


class ArtifactError(BsqzError, IOError):
    pass


class ArtifactVersionError(ArtifactError):
    pass


class ArtifactChecksumError(ArtifactError):
    pass
