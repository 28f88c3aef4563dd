"""
Entry point: python main.py <command> --config run.yaml [options]
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
