#!/usr/bin/env python3
"""Run the 2x2 {mean,max} x {video,audio} pooling ablation on a dataset.

Usage: python scripts/pooling_matrix.py --manifest PATH [--out FILE] [flags...]
Flags are forwarded to the `mmreg pooling-matrix` command.
"""

import sys

from mmreg.cli import main

if __name__ == "__main__":
    sys.exit(main(["pooling-matrix", *sys.argv[1:]]))
