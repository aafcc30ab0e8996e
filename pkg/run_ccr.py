# run_ccr.py
"""Run the ccr batch front end from a source checkout: python run_ccr.py fit --config run.toml ..."""

import sys

from ccr.cli import main

if __name__ == "__main__":
    sys.exit(main())
