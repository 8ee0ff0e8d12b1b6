"""Exception hierarchy shared by all privaudit modules"""


class PrivauditError(Exception):
    pass


class ShapeError(PrivauditError, ValueError):
    """Input dimensions do not match the model specification"""


class NumericError(PrivauditError, ArithmeticError):
    """A computation produced a non-finite value"""


class DivergenceError(NumericError):
    def __init__(self, iteration: int, run_id: str = "", detail: str = ""):
        self.iteration = iteration
        self.run_id = run_id
        message = f"Training diverged at iteration {iteration}"

        if run_id:
            message += f" (run {run_id})"
        if detail:
            message += f": {detail}"

        super().__init__(message)


class DomainError(PrivauditError, ValueError):
    """Argument outside the mathematical domain of a function"""


class InvariantError(PrivauditError, ValueError):
    """A domain object violates one of its invariants"""


class ConfigurationError(PrivauditError, ValueError):
    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class IncompleteSensitivityError(PrivauditError):
    """Some sensitivity samples failed; `report` holds the samples that finished"""

    def __init__(self, report, failures: dict[int, str]):
        self.report = report
        self.failures = failures
        indices = ", ".join(str(i) for i in sorted(failures))
        super().__init__(f"Sensitivity sampling aborted, failed samples: {indices}")
