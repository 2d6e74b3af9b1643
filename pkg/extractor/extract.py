#!/usr/bin/env python3
"""Launcher: python extract.py features|traces|embed --config cfg.json"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "src"))

from dnn_extractor.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
