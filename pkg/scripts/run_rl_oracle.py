#!/usr/bin/env python3
"""Self-check: identify the series RL reference with all three methods
and assert every point of the 30-point comparison grid against the
closed-form admittance (2 percent magnitude, 2 degree phase).

Exit code 0 means every method passed.
"""

import sys

from dqadmit.cli import main

if __name__ == "__main__":
    sys.exit(main(["oracle", "--out", "out/rl_oracle"]))
