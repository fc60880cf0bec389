"""
Exception hierarchy for gwldp.

Sampler outcomes such as overflow or an exhausted retry budget are values,
not exceptions; see backend.trees.Overflow and backend.trees.Exhausted.
"""

from typing import Optional


class GWLDPError(Exception):
    """Base class for all gwldp errors"""


class DomainError(GWLDPError, ValueError):
    """Input outside the domain of an operation"""


class KernelValidationError(DomainError):
    """Malformed kernel, count law or kernel spec document"""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class ResourceBudgetError(GWLDPError, RuntimeError):
    """An enumeration or search would exceed its configured budget"""

    def __init__(self, message: str, budget: Optional[int] = None):
        self.budget = budget
        super().__init__(message)
