#!/usr/bin/env python3
"""Sweep the regression-head count and record validation MSE per setting.

Usage: python scripts/head_sweep.py --manifest PATH --out-csv FILE \
           [--values 4,8,16,32,64,128] [flags...]
Flags are forwarded to the `mmreg sweep-heads` command.
"""

import sys

from mmreg.cli import main

if __name__ == "__main__":
    sys.exit(main(["sweep-heads", *sys.argv[1:]]))
