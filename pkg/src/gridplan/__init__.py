"""Combinatorial power-system planning with leveled constraints and meta-heuristics."""

__version__ = "0.1.0"
