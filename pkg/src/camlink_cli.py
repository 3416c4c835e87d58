"""Console entry point for camlink.

Reads --threads (or DYG_THREADS) before anything imports numpy, so the
cap actually reaches the BLAS thread pools, then hands over to the real
CLI.
"""

import os
import sys


def _peek_threads(argv):
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--threads="):
            return arg.split("=", 1)[1]
    return os.environ.get("DYG_THREADS")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    threads = _peek_threads(argv)
    if threads and threads.isdigit() and int(threads) >= 1:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    from camlink.cli import main as cli_main
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
