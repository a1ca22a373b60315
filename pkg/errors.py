"""
Error taxonomy for vflow
Every failure a run, a certification or a scenario parse can raise
"""

from typing import Optional


class VFlowError(Exception):
    """Base class of all vflow failures"""

    exit_code = 4


class NumericFailure(VFlowError):
    """A one-dimensional maximisation or evaluation could not be carried out"""


class NonConvergence(VFlowError):
    """Scalar Newton iteration exceeded its iteration cap"""

    def __init__(self, iterations: int, message: str = ''):
        self.iterations = iterations
        super().__init__(message or f"no convergence after {iterations} iterations")


class InfiniteOperand(VFlowError):
    """An extended-real operand was +inf where a finite value is required"""


class OutOfRange(VFlowError):
    """Argument lies outside the tabulated range of a law"""


class CflViolation(VFlowError):
    """A characteristic substep moved further than the displacement guard"""

    def __init__(self, displacement: float, limit: float):
        self.displacement = displacement
        self.limit = limit
        super().__init__(
            f"substep displacement {displacement:.3e} exceeds guard {limit:.3e}; reduce dt"
        )


class SelfIntersection(VFlowError):
    """The advected interface polyline crosses itself (topology change)"""

    exit_code = 3

    def __init__(self, step: int, time: Optional[float] = None):
        self.step = step
        self.time = time
        where = f" at t={time:.6g}" if time is not None else ''
        super().__init__(f"interface self-intersection in step {step}{where}")


class IterationLimit(VFlowError):
    """Weighted Galerkin solve did not reach its residual tolerance"""

    def __init__(self, iterations: int):
        self.iterations = iterations
        super().__init__(
            f"weighted projection not converged in {iterations} iterations (near-vacuum density?)"
        )


class InadmissibleTest(VFlowError):
    """Test function leaves the effective domain of a dissipation potential"""

    def __init__(self, test_id: str):
        self.test_id = test_id
        super().__init__(f"test function {test_id} is not admissible: F(D phi) = +inf")


class MalformedTrajectory(VFlowError):
    """Stored snapshots are inconsistent with each other or with the manifest"""


class ParseError(VFlowError):
    """Scenario text could not be parsed or validated"""

    exit_code = 2

    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")
