"""Linear belief compression for POMDPs.

Value-directed and NMF-based compressions, a point-based solver over the
original or compressed belief process, policy evaluation and diagnostics.
"""

__version__ = "0.4.0"
