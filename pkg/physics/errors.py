"""Exception types raised by the physics layer.

Every error carries a short machine-readable ``code`` which the runner turns
into a structured JSON payload (see runner/executor.py).
"""
from __future__ import annotations


class MLZError(Exception):
    code = "mlz_error"


# ── Domain / construction errors ─────────────────────────────────────────────

class SingularTime(MLZError, ValueError):
    code = "singular_time"


class DegenerateSlopes(MLZError, ValueError):
    code = "degenerate_slopes"


class DeformationSingular(MLZError, ValueError):
    code = "deformation_singular"

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ComplexCouplingUnsupported(MLZError, ValueError):
    code = "complex_coupling_unsupported"


class DegenerateReduction(MLZError, ValueError):
    code = "degenerate_reduction"


class ComplexExponents(MLZError, ValueError):
    code = "complex_exponents"


# ── Numerical failures ───────────────────────────────────────────────────────

class BranchAmbiguity(MLZError, ArithmeticError):
    code = "branch_ambiguity"


class NotConverged(MLZError, ArithmeticError):
    code = "not_converged"


class StepUnderflow(MLZError, ArithmeticError):
    code = "step_underflow"
