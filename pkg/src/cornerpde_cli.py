"""Console entry point for the cornerpde command.

Lives outside the package on purpose: importing ``cornerpde`` pulls in
numpy/scipy, whose BLAS backends read their thread-count environment
variables once at load time.  The reproducibility contract (identical
bytes for identical config and seed) holds at one thread, so the thread
pin must happen before any heavy import — hence this shim scans argv by
hand, sets the environment, and only then loads the real CLI.
"""

import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _threads_from_argv(argv) -> str:
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--threads="):
            return arg.split("=", 1)[1]
    return "1"


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    for var in _THREAD_VARS:
        os.environ[var] = _threads_from_argv(argv)
    from cornerpde.cli import run_cli
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
