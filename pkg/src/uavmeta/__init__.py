"""Age-of-information and transmit-power minimization for a UAV data collector.

Grid-world simulator, numpy deep Q-learning and first-order MAML over tasks
that differ in the AoI/power trade-off weight.
"""

__version__ = "0.1.0"
