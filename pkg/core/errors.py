"""
Exception hierarchy
Library code raises these; pipelines turn them into per-row statuses
"""

from typing import Any, Dict, Optional


class StealthbenchError(Exception):
    """Base class for all library errors"""


class InvalidInputError(StealthbenchError, ValueError):
    """Input failed validation (shapes, probabilities, non-finite values)"""


class ChainStructureError(StealthbenchError):
    """Markov chain has no unique stationary distribution"""


class NumericalError(StealthbenchError):
    """A linear solve or decomposition failed"""


class InstabilityError(StealthbenchError):
    """Closed loop is not Schur stable"""


class DomainError(StealthbenchError, ValueError):
    """Argument outside the domain where a formula is valid"""


class InfeasibleProblemError(StealthbenchError):
    """Optimization problem has no feasible point"""

    def __init__(self, message: str, status: str = "infeasible"):
        super().__init__(message)
        self.status = status


class InfeasibleBetaError(StealthbenchError):
    """Penalty weight beta breaks the Riccati recursion"""

    def __init__(self, message: str, beta: float, step: Optional[int] = None):
        super().__init__(message)
        self.beta = beta
        self.step = step


class BracketError(StealthbenchError):
    """Bisection could not bracket a feasibility switch"""

    def __init__(self, message: str, pattern: Optional[Dict[float, bool]] = None):
        super().__init__(message)
        self.pattern = pattern or {}


class ConfigError(StealthbenchError, ValueError):
    """Experiment configuration failed schema validation"""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path

    def to_dict(self) -> Dict[str, Any]:
        return {"path": self.path, "message": str(self)}
