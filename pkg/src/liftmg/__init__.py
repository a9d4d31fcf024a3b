"""Reinforcement learning over motion-generator subgoals in a 2D mobile-manipulation world."""

__version__ = "0.1.0"
