"""Two-level reinforcement-learning walker for multi-hop knowledge-graph queries."""

__version__ = "0.1.0"
