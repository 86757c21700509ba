"""Exception types shared across the package."""


class FinmeasError(Exception):
    """Base class for package-specific failures."""


class DimensionMismatch(FinmeasError, ValueError):
    """Operands have incompatible shapes; the message names both sizes."""


class AdmissibilityError(FinmeasError, ValueError):
    """A coefficient vector violates the model's admissibility constraints."""


class SingularGramError(FinmeasError, ValueError):
    """Gram matrix too ill-conditioned to invert reliably."""


class InjectivityViolation(FinmeasError, RuntimeError):
    """Distinct unknowns produced identical measurements at sample scale."""


class BudgetExceeded(FinmeasError, RuntimeError):
    """A configured budget (lattice size, enumeration width) was exhausted."""


class ConfigError(FinmeasError, ValueError):
    """Invalid or unknown experiment configuration entry."""


class NumericalFailure(FinmeasError, RuntimeError):
    """Divergence, degeneracy, or failed guess search at run time."""
