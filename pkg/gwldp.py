#!/usr/bin/env python3
"""
Launcher for the gwldp command line: python gwldp.py <command> [flags]
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from backend.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
