"""Conveyor pick learning against a deterministic belt simulator.

The pipeline: a self-calibrating depth camera to gantry mapping, height
map reconstruction, geometric grasp-handle search on height lines, 2-D
complex-wavelet features per candidate, a random forest scored online,
and an experiment harness that closes the learn-from-own-attempts loop.
"""

__version__ = "0.1.0"
