"""Fog-of-war state prediction toolkit.

Synthetic skirmish episodes with partial observability, an adversarially
trained encoder-decoder that reconstructs the hidden global state from
what one side has seen, and the evaluation battery to judge it against
the observation-only baselines.
"""

__version__ = "0.1.0"
