"""Run the PowerCoreFW command line: ``python -m powercorefw``."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
