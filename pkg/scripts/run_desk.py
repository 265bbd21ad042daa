"""Run every CLI subcommand at desk scale into one output directory.

Usage: python3 scripts/run_desk.py [OUT_DIR] [--paper-scale]
"""

import sys
from pathlib import Path

from lcapa import cli


def main(argv):
    paper = "--paper-scale" in argv
    args = [a for a in argv if a != "--paper-scale"]
    out = Path(args[0]) if args else Path("results")
    worst = 0
    for name in cli.COMMANDS:
        extra = ["--paper-scale"] if paper else []
        code = cli.main([name, "--out-dir", str(out), *extra])
        print(f"{name}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
