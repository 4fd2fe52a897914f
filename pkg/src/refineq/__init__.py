"""refineq: reinforcement-learning question refinement at desk scale."""

__version__ = "0.1.0"
