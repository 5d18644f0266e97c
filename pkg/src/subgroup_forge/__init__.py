"""Permutation-subgroup discovery with learnable linear heads and invariant networks."""

__version__ = "0.1.0"
