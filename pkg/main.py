#!/usr/bin/env python3
"""
SemSync
Semantic LIDAR-camera extrinsic and time-delay calibration
"""

import os
import sys

# Make the src package importable when run from another directory
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
