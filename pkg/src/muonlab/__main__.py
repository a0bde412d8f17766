"""Entry point for ``python -m muonlab``."""

import sys

from muonlab.cli import main

if __name__ == "__main__":
    sys.exit(main())
