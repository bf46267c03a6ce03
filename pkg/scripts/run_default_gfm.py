#!/usr/bin/env python3
"""Run the default grid-forming testbed with all three methods.

Artifacts land in out/gfm_default (bode CSVs, diagnostics, gnuplot
figures, manifest). Expect roughly ten seconds of simulation after the
first-run JIT compile.
"""

import sys
from pathlib import Path

from dqadmit.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main(["run", "--config", str(ROOT / "configs" / "gfm_default.cfg")]))
