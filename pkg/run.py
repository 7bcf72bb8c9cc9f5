"""
VecEdit - steering vectors to rank-1 weight edits
Run this file to use the command-line interface, e.g.

    python run.py bench --out outputs/bench
    python run.py edit --rho-attn 0.5 --rho-mlp inf --alpha 0.3 --out outputs/edit
"""

import sys

from vecedit.cli import main

if __name__ == '__main__':
    sys.exit(main())
