"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, I/O errors exit 2,
NumericalError exits 3, ContractError exits 4.
"""


class ContractError(ValueError):
    """An input violates a documented precondition or invariant."""


class NumericalError(RuntimeError):
    """A numerical routine (solver, optimizer) failed to produce a usable result."""
