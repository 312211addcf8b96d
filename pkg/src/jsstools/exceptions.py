"""Exceptions for JSSTools"""

from typing import List, Optional


class JSTError(Exception):
    pass


class ScenarioError(JSTError):
    """Scenario file could not be parsed or violates an invariant"""

    line: Optional[int]
    column: Optional[int]

    def __init__(
        self, msg: str, line: Optional[int] = None, column: Optional[int] = None
    ) -> None:

        if line is not None:
            msg = f"line {line}, column {column}: {msg}"
        super().__init__(msg)
        self.line = line
        self.column = column


class SchemeError(JSTError):
    """Scheme file could not be read or the scheme is not legal"""

    violations: List[str]

    def __init__(self, msg: str, violations: Optional[List[str]] = None) -> None:

        if violations:
            msg = msg + ": " + "; ".join(violations[:10])
            if len(violations) > 10:
                msg += f" (and {len(violations) - 10} more)"
        super().__init__(msg)
        self.violations = list(violations or [])


class ActionError(JSTError, ValueError):
    pass


class EpisodeError(JSTError):
    pass


class ProgramSyntaxError(JSTError):

    line: Optional[int]
    column: Optional[int]

    def __init__(
        self, msg: str, line: Optional[int] = None, column: Optional[int] = None
    ) -> None:

        if line is not None and line > 0:
            msg = f"line {line}, column {column}: {msg}"
        super().__init__(msg)
        self.line = line
        self.column = column


class EvalError(JSTError):
    pass


class VerificationError(JSTError):
    pass


class PatternError(JSTError):
    pass


class DivergedError(JSTError):

    step: int

    def __init__(self, msg: str, step: int = -1) -> None:

        super().__init__(f"{msg} (step {step})" if step >= 0 else msg)
        self.step = step


class CheckpointError(JSTError):
    pass
