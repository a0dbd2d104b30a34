"""k-NN memorization audit for two-tower image-text models."""

from ._core import *  # noqa: F401,F403
from ._core import (
    AlignmentError,
    ArgumentError,
    ContractError,
    DataError,
    Error,
    FormatError,
    TrainingError,
    ValidationError,
)

__all__ = [name for name in dir() if not name.startswith("_")]


def main(argv=None):
    """Console entry point mirroring the `dejavu` executable."""
    import sys

    code, out, err = run_cli(list(sys.argv[1:] if argv is None else argv))  # noqa: F405
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
