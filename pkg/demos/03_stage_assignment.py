"""
Where should global mixing go?
==============================

Compare the hybrid stage assignment (windowed attention in the first stage,
global mixers below it) with windowed attention in every stage, on the same
synthetic train/test split and the same seeds. The acceptance suite runs the
full 600-iteration, 3-seed version; pass --quick for a short run.
"""

import argparse
import logging

from vmixer.ablation import HYBRID, UNIFORM_LVSA, AblationSetup, compare_stage_assignments

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true", help="100 iterations, one seed")
args = parser.parse_args()
logging.basicConfig(level=logging.WARNING)

setup = AblationSetup(epochs=10) if args.quick else AblationSetup()
seeds = (0,) if args.quick else (0, 1, 2)
result = compare_stage_assignments((HYBRID, UNIFORM_LVSA), seeds, setup)

print(result.table())
print()
for kinds in (HYBRID, UNIFORM_LVSA):
    print(f"{','.join(kinds):<24} seed-mean HD95 {result.seed_mean(kinds):.3f}")
