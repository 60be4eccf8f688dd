"""Allow `python -m linrec` to behave like the `linrec` console script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
