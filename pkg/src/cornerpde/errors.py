"""Exception taxonomy shared by every module and mapped to CLI exit codes.

Three failure families cover the whole workbench:

* :class:`ValidationError` -- the caller handed us parameters, configs, or
  geometry outside the documented contracts (exit code 2),
* :class:`NumericError` -- a computation failed for numerical reasons:
  singular systems, degenerate pencils, broken meshes (exit code 3),
* :class:`NonConvergenceError` -- an iteration ran out of its convergence
  budget; carries the iteration log for post-mortems (exit code 4).
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Input violates a documented precondition or config schema."""


class NumericError(RuntimeError):
    """A numerical computation failed (singular system, degenerate data)."""


class NonConvergenceError(NumericError):
    """An iterative solve exhausted its budget or diverged.

    Attributes
    ----------
    log : object or None
        The iteration log accumulated up to the failure, when available.
    """

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


#: Process exit codes used by the command-line front end.
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGENCE = 4
