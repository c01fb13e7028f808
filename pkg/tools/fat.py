#!/usr/bin/env python3
"""
Run the qnn-fat command line from a source checkout.

Examples:
  fat.py train --config configs/fat2.yaml --out-dir results
  fat.py train --config configs/sat.yaml --seed 7 --debug
  fat.py sweep --config configs/fat2.yaml --checkpoint results/cnv-s_w1a1_fat2_p5_channel.qfat
  fat.py sweep --config configs/fat2.yaml --checkpoint results/cnv-s_w1a1_fat2_p5_channel.qfat --mode pixel
  fat.py pareto --report results/cnv-s_w1a1_fat2_p5_channel_channel_sweep.json \\
                --checkpoint results/cnv-s_w1a1_fat2_p5_channel.qfat --out-dir results
  fat.py report results/*_channel_sweep.json --out-dir results --json
"""

import sys
from pathlib import Path

# Add the src directory to the path so we can import qnn_fat
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from qnn_fat.cli import main

if __name__ == "__main__":
    sys.exit(main())
