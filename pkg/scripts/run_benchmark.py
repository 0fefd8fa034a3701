#!/usr/bin/env python3
"""Run the full benchmark suite and emit results tables.

Thin wrapper over the `hydroforecast bench` subcommand for use without an
installed console script.
"""

import sys

from hydroforecast.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench"] + sys.argv[1:]))
