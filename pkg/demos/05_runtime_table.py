"""
A small runtime table
=====================

Times each reduced variant at the smallest resolution of the benchmark set.
Larger resolutions are estimated from a probe run and skipped when they
would exceed the memory budget.
"""

from prnet.bench import ORDERING_VARIANTS, bench, check_runtime_ordering, to_markdown
from prnet.model import ModelConfig

configs = [ModelConfig.from_label(v) for v in ORDERING_VARIANTS]
rows = bench(configs, [(640, 360), (320, 180)], reps=3, memory_budget=512 * 2 ** 20)
print(to_markdown(rows))

report = check_runtime_ordering(rows)
print(f"ordering inversions: {len(report['warnings'])} small, {len(report['violations'])} large")
